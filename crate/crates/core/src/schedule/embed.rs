use serde::{Deserialize, Serialize};

use super::{ScheduleDag, TaskId};

/// Shape of the per-task feature vector.
///
/// Intra-site layout (`sites == None`), with `D` filters:
/// `[ρ (D) | usage at B..B+E (D each) | zero padding up to E_max | slowdown]`.
///
/// Distributed layout with `N` sites replaces every `D`-block by an `N·D`
/// block ordered site-major, filter-minor; the demand block carries `ρ` in
/// the task's own site slot only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingLayout {
    pub num_filters: usize,
    pub e_max: u32,
    pub sites: Option<usize>,
}

/// Non-zero entries of an embedding, by ascending index.
pub type SparseEmbedding = Vec<(u32, f64)>;

impl EmbeddingLayout {
    pub fn intra_site(num_filters: usize, e_max: u32) -> Self {
        Self {
            num_filters,
            e_max,
            sites: None,
        }
    }

    pub fn distributed(num_sites: usize, num_filters: usize, e_max: u32) -> Self {
        Self {
            num_filters,
            e_max,
            sites: Some(num_sites),
        }
    }

    fn block(&self) -> usize {
        self.sites.unwrap_or(1) * self.num_filters
    }

    pub fn len(&self) -> usize {
        self.block() * (self.e_max as usize + 1) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sparse embedding of a placed task. Exposures longer than `e_max` are
    /// truncated to `e_max` snapshots.
    pub fn embed_sparse(&self, dag: &ScheduleDag, task: TaskId) -> SparseEmbedding {
        let slot = dag.slot(task).expect("embedding an unplaced task");
        let info = dag.instance().task(task);
        let d = self.num_filters;
        let block = self.block();
        let mut out = Vec::with_capacity(block + 1);
        let own_offset = match self.sites {
            Some(_) => slot.site * d,
            None => 0,
        };
        for f in 0..d {
            if info.mask & (1 << f) != 0 {
                out.push(((own_offset + f) as u32, 1.0));
            }
        }
        let snapshots = info.exposure.min(self.e_max);
        for k in 0..snapshots {
            let base = block + k as usize * block;
            match self.sites {
                None => {
                    let u = dag.usage(slot.site, slot.start + k);
                    for f in 0..d {
                        if u & (1 << f) != 0 {
                            out.push(((base + f) as u32, 1.0));
                        }
                    }
                }
                Some(n) => {
                    for s in 0..n.min(dag.instance().num_sites()) {
                        let u = dag.usage(s, slot.start + k);
                        for f in 0..d {
                            if u & (1 << f) != 0 {
                                out.push(((base + s * d + f) as u32, 1.0));
                            }
                        }
                    }
                }
            }
        }
        out.push(((self.len() - 1) as u32, dag.slowdown(task).unwrap()));
        out
    }

    pub fn embed(&self, dag: &ScheduleDag, task: TaskId) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for (i, x) in self.embed_sparse(dag, task) {
            v[i as usize] = x;
        }
        v
    }
}
