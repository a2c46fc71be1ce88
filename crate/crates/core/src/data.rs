//! Data sets and batch partitions.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::loss::Label;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// `[N, C]` real targets.
    Regression(Tensor),
    /// Class indices.
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(t) => t.rows(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> Label {
        match self {
            Targets::Regression(t) => Label::Real(t.row(i).to_vec()),
            Targets::Classes(c) => Label::Class(c[i]),
        }
    }

    fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(t) => {
                let c = t.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &i in idx {
                    data.extend_from_slice(t.row(i));
                }
                Targets::Regression(Tensor::from_parts(vec![idx.len(), c], data))
            }
            Targets::Classes(cls) => Targets::Classes(idx.iter().map(|&i| cls[i]).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        if inputs.ndim() != 2 {
            return Err(Error::dim(
                "dataset inputs",
                "[N, in]",
                format!("{:?}", inputs.shape()),
            ));
        }
        if inputs.rows() != targets.len() {
            return Err(Error::dim("dataset targets", inputs.rows(), targets.len()));
        }
        if let Targets::Regression(t) = &targets {
            if t.ndim() != 2 {
                return Err(Error::dim(
                    "regression targets",
                    "[N, C]",
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Inputs and targets of the given data points, in that order.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Targets) {
        let c = self.inputs.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.inputs.row(i));
        }
        (
            Tensor::from_parts(vec![idx.len(), c], data),
            self.targets.gather(idx),
        )
    }
}

/// How the data set is split for accumulation.
#[derive(Clone, Debug)]
pub enum Batching {
    /// One batch holding all data.
    Full,
    /// Consecutive batches of at most this many points.
    Size(usize),
    /// Explicit disjoint index sets covering the data set.
    Partition(Vec<Vec<usize>>),
    /// A fresh random partition on every pass, like a shuffling data loader.
    /// Passes are counted through shared state, so clones reshuffle together.
    Shuffled {
        batch_size: usize,
        seed: u64,
        epoch: Arc<AtomicU64>,
    },
}

impl Batching {
    pub fn shuffled(batch_size: usize, seed: u64) -> Self {
        Batching::Shuffled {
            batch_size,
            seed,
            epoch: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::contract("data set must not be empty"));
        }
        match self {
            Batching::Full => Ok(()),
            Batching::Size(0) | Batching::Shuffled { batch_size: 0, .. } => {
                Err(Error::contract("batch size must be >= 1"))
            }
            Batching::Size(_) | Batching::Shuffled { .. } => Ok(()),
            Batching::Partition(parts) => {
                let mut seen = vec![false; n];
                for p in parts {
                    if p.is_empty() {
                        return Err(Error::contract("empty batch in partition"));
                    }
                    for &i in p {
                        if i >= n {
                            return Err(Error::dim("batch index", format!("< {n}"), i));
                        }
                        if seen[i] {
                            return Err(Error::contract(format!(
                                "index {i} appears in two batches"
                            )));
                        }
                        seen[i] = true;
                    }
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::contract("partition does not cover the data set"));
                }
                Ok(())
            }
        }
    }

    /// Index sets for one pass over `n` points.
    pub fn batches(&self, n: usize) -> Vec<Vec<usize>> {
        match self {
            Batching::Full => vec![(0..n).collect()],
            Batching::Size(b) => (0..n)
                .collect::<Vec<_>>()
                .chunks(*b)
                .map(<[usize]>::to_vec)
                .collect(),
            Batching::Partition(p) => p.clone(),
            Batching::Shuffled {
                batch_size,
                seed,
                epoch,
            } => {
                let e = epoch.fetch_add(1, Ordering::Relaxed);
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng::stream(*seed, e, 0));
                idx.chunks(*batch_size).map(<[usize]>::to_vec).collect()
            }
        }
    }
}
