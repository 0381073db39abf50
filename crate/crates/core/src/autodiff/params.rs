//! Named parameter store, shared by all model architectures.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, Scalar, Tid};

#[derive(Debug, Clone)]
pub struct ParamEntry<F> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

/// Ordered collection of named parameter tensors. Insertion order is part of
/// the contract: it fixes initialization, optimizer state layout, and
/// checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<F> {
    entries: Vec<ParamEntry<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<F>) {
        assert_eq!(data.len(), rows * cols, "param {name}: data length mismatch");
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            data,
        });
    }

    /// Truncated normal init: resample anything beyond two standard deviations.
    pub fn add_trunc_normal<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) {
        let normal = Normal::new(0.0, std).expect("std > 0");
        let data = (0..rows * cols)
            .map(|_| {
                let v = loop {
                    let v = normal.sample(rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                };
                F::of(v)
            })
            .collect();
        self.add(name, rows, cols, data);
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.add(name, rows, cols, vec![F::zero(); rows * cols]);
    }

    pub fn add_ones(&mut self, name: &str, rows: usize, cols: usize) {
        self.add(name, rows, cols, vec![F::one(); rows * cols]);
    }

    pub fn get(&self, name: &str) -> &ParamEntry<F> {
        &self.entries[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamEntry<F> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.entries[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<F>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Copies entries whose name starts with `prefix` into `other`, replacing
    /// its values. Shapes must match. Used to transplant pretrained encoders.
    pub fn copy_prefix_into(&self, prefix: &str, other: &mut ParamSet<F>) {
        for e in &self.entries {
            if e.name.starts_with(prefix) && other.contains(&e.name) {
                let dst = other.get_mut(&e.name);
                assert_eq!((dst.rows, dst.cols), (e.rows, e.cols));
                dst.data = e.data.clone();
            }
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for e in &self.entries {
            out.add(
                &e.name,
                e.rows,
                e.cols,
                e.data.iter().map(|&v| G::of(v.to_f64())).collect(),
            );
        }
        out
    }

    /// Binds every parameter as a leaf on the given tape.
    pub fn bind(&self, g: &mut Graph<F>) -> BoundParams {
        let mut map = HashMap::with_capacity(self.entries.len());
        let mut order = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let tid = g.leaf(e.rows, e.cols, e.data.clone());
            map.insert(e.name.clone(), tid);
            order.push(tid);
        }
        BoundParams { map, order }
    }
}

/// Tape handles for one binding of a [`ParamSet`], aligned with its entries.
pub struct BoundParams {
    map: HashMap<String, Tid>,
    order: Vec<Tid>,
}

impl BoundParams {
    pub fn tid(&self, name: &str) -> Tid {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Tape handles in `ParamSet` entry order.
    pub fn ordered(&self) -> &[Tid] {
        &self.order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_stays_within_two_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p: ParamSet<f32> = ParamSet::new();
        p.add_trunc_normal("w", 50, 50, 0.02, &mut rng);
        assert!(p.get("w").data.iter().all(|&v| v.abs() <= 0.04 + 1e-6));
    }

    #[test]
    fn bind_preserves_order_and_values() {
        let mut p: ParamSet<f64> = ParamSet::new();
        p.add("a", 1, 2, vec![1.0, 2.0]);
        p.add("b", 2, 1, vec![3.0, 4.0]);
        let mut g = Graph::eval();
        let bound = p.bind(&mut g);
        assert_eq!(bound.ordered().len(), 2);
        assert_eq!(g.data(bound.tid("a")), &[1.0, 2.0]);
        assert_eq!(g.data(bound.tid("b")), &[3.0, 4.0]);
    }

    #[test]
    fn copy_prefix_transplants_matching_entries() {
        let mut src: ParamSet<f64> = ParamSet::new();
        src.add("enc.w", 1, 2, vec![7.0, 8.0]);
        src.add("head.w", 1, 1, vec![9.0]);
        let mut dst: ParamSet<f64> = ParamSet::new();
        dst.add("enc.w", 1, 2, vec![0.0, 0.0]);
        dst.add("out.w", 1, 1, vec![0.0]);
        src.copy_prefix_into("enc.", &mut dst);
        assert_eq!(dst.get("enc.w").data, vec![7.0, 8.0]);
        assert_eq!(dst.get("out.w").data, vec![0.0]);
    }
}
