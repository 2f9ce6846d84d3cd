//! Cluster-contiguous re-indexing of a codebook and its token streams.

use serde::{Deserialize, Serialize};

use crate::clustering::{json_location, ClusterAssignment};
use crate::codebook::{Codebook, TokenGrid};
use crate::error::{Error, Result};

/// A bijection over `[0, N)`. `forward[old] = new`, `inverse[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    forward: Vec<u32>,
    inverse: Vec<u32>,
}

impl PermutationMap {
    pub fn identity(size: usize) -> Self {
        let forward: Vec<u32> = (0..size as u32).collect();
        Self {
            inverse: forward.clone(),
            forward,
        }
    }

    pub fn from_forward(forward: Vec<u32>) -> Result<Self> {
        let size = forward.len();
        let mut inverse = vec![u32::MAX; size];
        for (old, &new) in forward.iter().enumerate() {
            let slot = inverse.get_mut(new as usize).ok_or_else(|| {
                Error::InvalidPermutation(format!("index {new} out of range for size {size}"))
            })?;
            if *slot != u32::MAX {
                return Err(Error::InvalidPermutation(format!(
                    "index {new} appears more than once"
                )));
            }
            *slot = old as u32;
        }
        Ok(Self { forward, inverse })
    }

    /// Builds the map from a positional order: `order[new] = old`.
    pub fn from_order(order: Vec<u32>) -> Result<Self> {
        let p = Self::from_forward(order)?;
        Ok(p.inverted())
    }

    pub fn forward(&self) -> &[u32] {
        &self.forward
    }

    pub fn inverse(&self) -> &[u32] {
        &self.inverse
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn inverted(&self) -> Self {
        Self {
            forward: self.inverse.clone(),
            inverse: self.forward.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &f)| i as u32 == f)
    }

    /// True when every member of cluster `j` lands in `[j*m, (j+1)*m)`.
    pub fn is_cluster_contiguous(&self, asg: &ClusterAssignment) -> bool {
        asg.m > 0
            && self.len() == asg.assignment.len()
            && self
                .forward
                .iter()
                .zip(&asg.assignment)
                .all(|(&new, &c)| new as usize / asg.m == c as usize)
    }

    pub fn to_file(&self, n: usize, m: usize) -> PermutationFile {
        PermutationFile {
            n,
            m,
            forward: self.forward.clone(),
        }
    }
}

/// On-disk form: `{"n": int, "m": int, "forward": [int...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationFile {
    pub n: usize,
    pub m: usize,
    pub forward: Vec<u32>,
}

impl PermutationFile {
    /// Parses and validates: `forward` must be a bijection of length `n * m`.
    pub fn from_json_str(text: &str) -> Result<(Self, PermutationMap)> {
        let file: Self = serde_json::from_str(text)
            .map_err(|e| Error::parse(json_location(&e), e.to_string()))?;
        if file.n.checked_mul(file.m) != Some(file.forward.len()) {
            return Err(Error::InvalidPermutation(format!(
                "n={} m={} does not match {} entries",
                file.n,
                file.m,
                file.forward.len()
            )));
        }
        let map = PermutationMap::from_forward(file.forward.clone())?;
        Ok((file, map))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("permutation serializes")
    }
}

/// Places cluster `j` at new indices `[j*m, (j+1)*m)`, members in ascending
/// old-index order.
pub fn build_permutation(asg: &ClusterAssignment) -> Result<PermutationMap> {
    let sizes = asg.cluster_sizes()?;
    if asg.n.checked_mul(asg.m) != Some(asg.assignment.len()) {
        return Err(Error::Unbalanced(format!(
            "n={} m={} does not cover {} embeddings",
            asg.n,
            asg.m,
            asg.assignment.len()
        )));
    }
    if let Some((j, &s)) = sizes.iter().enumerate().find(|(_, &s)| s != asg.m) {
        return Err(Error::Unbalanced(format!(
            "cluster {j} has {s} members, expected {}",
            asg.m
        )));
    }
    let mut next: Vec<u32> = (0..asg.n).map(|j| (j * asg.m) as u32).collect();
    let forward = asg
        .assignment
        .iter()
        .map(|&c| {
            let slot = &mut next[c as usize];
            let new = *slot;
            *slot += 1;
            new
        })
        .collect();
    PermutationMap::from_forward(forward)
}

/// Output row `forward[i]` is input row `i`.
pub fn apply_permutation(cb: &Codebook, perm: &PermutationMap) -> Result<Codebook> {
    if perm.len() != cb.len() {
        return Err(Error::DimensionMismatch(format!(
            "permutation of size {} for codebook of size {}",
            perm.len(),
            cb.len()
        )));
    }
    let mut entries = Vec::with_capacity(cb.entries().len());
    for &old in perm.inverse() {
        entries.extend_from_slice(cb.row(old as usize));
    }
    Codebook::new(entries, cb.len(), cb.dim())
}

pub fn remap_stream(tokens: &[u32], perm: &PermutationMap) -> Result<Vec<u32>> {
    tokens
        .iter()
        .map(|&t| {
            perm.forward
                .get(t as usize)
                .copied()
                .ok_or(Error::IndexOutOfRange {
                    index: t as usize,
                    size: perm.len(),
                })
        })
        .collect()
}

/// Replaces every token `t` by `forward[t]`.
pub fn remap_tokens(tokens: &TokenGrid, perm: &PermutationMap) -> Result<TokenGrid> {
    Ok(TokenGrid {
        indices: remap_stream(&tokens.indices, perm)?,
        height: tokens.height,
        width: tokens.width,
    })
}

/// Cluster of a rearranged token: `token / m`.
pub fn cluster_label(token: usize, m: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "cluster size m must be at least 1".into(),
        ));
    }
    Ok(token / m)
}
