//! Network shape and structured predefined-sparsity masks.
//!
//! A junction between a layer of `n_prev` neurons and one of `n_next` neurons
//! is described by a binary mask with rows indexed by succeeding neurons and
//! columns by preceding neurons. "Structured" means every preceding neuron has
//! the same fan-out FO and every succeeding neuron the same fan-in FI, which
//! forces `n_prev * FO = n_next * FI`. Bias connections are never masked; they
//! are handled separately by the circuit and training layers.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Layered network shape: neuron counts per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    layer_sizes: Vec<usize>,
}

impl NetworkTopology {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a network needs at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(&n) = layer_sizes.iter().find(|&&n| n == 0) {
            return Err(Error::InvalidParameter(format!("layer size must be >= 1, got {n}")));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn junction_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// (n_prev, n_next) of junction `j` (0-based).
    pub fn junction_shape(&self, j: usize) -> (usize, usize) {
        (self.layer_sizes[j], self.layer_sizes[j + 1])
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// 0-based index of the second-to-last junction, where sparsity studies
    /// concentrate. None for single-junction networks.
    pub fn penultimate_junction(&self) -> Option<usize> {
        self.junction_count().checked_sub(2)
    }

    /// Check that `masks` has one correctly shaped mask per junction.
    pub fn validate_masks(&self, masks: &[MaskMatrix]) -> Result<()> {
        if masks.len() != self.junction_count() {
            return Err(Error::DimensionMismatch {
                context: "mask count".into(),
                expected: self.junction_count(),
                got: masks.len(),
            });
        }
        for (j, mask) in masks.iter().enumerate() {
            let (n_prev, n_next) = self.junction_shape(j);
            if mask.n_prev() != n_prev || mask.n_next() != n_next {
                return Err(Error::DimensionMismatch {
                    context: format!("mask shape at junction {}", j + 1),
                    expected: n_next * n_prev,
                    got: mask.n_next() * mask.n_prev(),
                });
            }
        }
        Ok(())
    }
}

/// Equal fan-out / fan-in counts of a structured mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regularity {
    pub fan_out: usize,
    pub fan_in: usize,
}

/// Binary connection mask of one junction: `n_next` rows x `n_prev` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    /// 1-based junction id, carried into the serialized header.
    junction: usize,
    entries: Array2<u8>,
}

impl MaskMatrix {
    pub fn new(junction: usize, entries: Array2<u8>) -> Result<Self> {
        if junction == 0 {
            return Err(Error::InvalidParameter("junction ids are 1-based".into()));
        }
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidParameter("mask must be non-empty".into()));
        }
        if entries.iter().any(|&e| e > 1) {
            return Err(Error::InvalidParameter("mask entries must be 0 or 1".into()));
        }
        Ok(Self { junction, entries })
    }

    /// Fully connected mask.
    pub fn full(junction: usize, n_prev: usize, n_next: usize) -> Result<Self> {
        Self::new(junction, Array2::ones((n_next, n_prev)))
    }

    pub fn junction(&self) -> usize {
        self.junction
    }

    pub fn n_prev(&self) -> usize {
        self.entries.ncols()
    }

    pub fn n_next(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }

    /// Number of present connections.
    pub fn ones(&self) -> usize {
        self.entries.iter().map(|&e| e as usize).sum()
    }

    /// Fan-out/fan-in if the mask is structured (all row sums equal, all
    /// column sums equal), else None.
    pub fn regularity(&self) -> Option<Regularity> {
        let row_sums: Vec<usize> = self
            .entries
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&e| e as usize).sum())
            .collect();
        let col_sums: Vec<usize> = self
            .entries
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|&e| e as usize).sum())
            .collect();
        let fan_in = row_sums[0];
        let fan_out = col_sums[0];
        if row_sums.iter().all(|&s| s == fan_in) && col_sums.iter().all(|&s| s == fan_out) {
            Some(Regularity { fan_out, fan_in })
        } else {
            None
        }
    }

    /// Present column indices per row.
    pub fn row_present(&self) -> Vec<Vec<usize>> {
        self.entries
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter_map(|(i, &e)| (e == 1).then_some(i))
                    .collect()
            })
            .collect()
    }

    /// Serialize to the plain-text block: `mask <junction> <n_next> <n_prev>`
    /// header, then one row of 0/1 characters per succeeding neuron.
    pub fn to_text(&self) -> String {
        let mut out = format!("mask {} {} {}\n", self.junction, self.n_next(), self.n_prev());
        for row in self.entries.rows() {
            for &e in row {
                out.push(if e == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| mask_format_err("empty mask block"))?;
        let mut mask = Self::parse_header(header)?;
        for r in 0..mask.n_next() {
            let line = lines
                .next()
                .ok_or_else(|| mask_format_err(&format!("missing mask row {}", r + 1)))?;
            mask.parse_row(r, line)?;
        }
        Ok(mask)
    }

    pub(crate) fn parse_header(header: &str) -> Result<Self> {
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "mask" {
            return Err(mask_format_err(&format!("bad mask header {header:?}")));
        }
        let junction: usize = fields[1]
            .parse()
            .map_err(|_| mask_format_err("bad junction id"))?;
        let n_next: usize = fields[2]
            .parse()
            .map_err(|_| mask_format_err("bad row count"))?;
        let n_prev: usize = fields[3]
            .parse()
            .map_err(|_| mask_format_err("bad column count"))?;
        Self::new(junction, Array2::zeros((n_next, n_prev)))
    }

    pub(crate) fn parse_row(&mut self, r: usize, line: &str) -> Result<()> {
        let line = line.trim_end();
        if line.len() != self.n_prev() {
            return Err(mask_format_err(&format!(
                "mask row {} has {} entries, expected {}",
                r + 1,
                line.len(),
                self.n_prev()
            )));
        }
        for (c, ch) in line.chars().enumerate() {
            self.entries[[r, c]] = match ch {
                '0' => 0,
                '1' => 1,
                other => {
                    return Err(mask_format_err(&format!("bad mask character {other:?}")));
                }
            };
        }
        Ok(())
    }
}

fn mask_format_err(detail: &str) -> Error {
    Error::Format {
        path: "<mask>".into(),
        offset: None,
        detail: detail.into(),
    }
}

/// Fraction of possible connections that exist.
pub fn junction_density(mask: &MaskMatrix) -> f64 {
    mask.ones() as f64 / (mask.n_prev() * mask.n_next()) as f64
}

/// A density realizable with exact fan-balance, with its fan counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibleDensity {
    pub density: f64,
    pub fan_out: usize,
    pub fan_in: usize,
}

/// All densities for which an `n_prev -> n_next` junction admits a structured
/// mask: fan-outs whose edge total divides evenly among succeeding neurons.
pub fn feasible_densities(n_prev: usize, n_next: usize) -> Vec<FeasibleDensity> {
    (1..=n_next)
        .filter(|fo| (n_prev * fo) % n_next == 0)
        .map(|fo| FeasibleDensity {
            density: fo as f64 / n_next as f64,
            fan_out: fo,
            fan_in: n_prev * fo / n_next,
        })
        .collect()
}

fn resolve_density(n_prev: usize, n_next: usize, density: f64) -> Result<FeasibleDensity> {
    let feasible = feasible_densities(n_prev, n_next);
    if let Some(hit) = feasible.iter().find(|f| (f.density - density).abs() < 1e-9) {
        return Ok(*hit);
    }
    let below = feasible
        .iter()
        .rev()
        .find(|f| f.density < density)
        .map(|f| f.density);
    let above = feasible.iter().find(|f| f.density > density).map(|f| f.density);
    let nearest = [below, above].into_iter().flatten().collect();
    Err(Error::InfeasibleDensity {
        requested: density,
        n_prev,
        n_next,
        nearest,
    })
}

/// Generate a structured mask with exact fan-balance.
///
/// Construction: input `i` connects to outputs `(i*FO + k) mod n_next` for
/// `k = 0..FO-1` (consecutive windows tile the output cycle, so fan-in comes
/// out exactly equal), then seeded random permutations relabel the input and
/// output indices. Pure function of `(n_prev, n_next, density, seed)`.
pub fn generate_structured_mask(
    junction: usize,
    n_prev: usize,
    n_next: usize,
    density: f64,
    seed: u64,
) -> Result<MaskMatrix> {
    if n_prev == 0 || n_next == 0 {
        return Err(Error::InvalidParameter("junction sides must be >= 1".into()));
    }
    let feasible = resolve_density(n_prev, n_next, density)?;
    let fan_out = feasible.fan_out;

    let mut r = rng::stream(seed);
    let mut perm_in: Vec<usize> = (0..n_prev).collect();
    let mut perm_out: Vec<usize> = (0..n_next).collect();
    perm_in.shuffle(&mut r);
    perm_out.shuffle(&mut r);

    let mut entries = Array2::zeros((n_next, n_prev));
    for i in 0..n_prev {
        for k in 0..fan_out {
            let o = (i * fan_out + k) % n_next;
            entries[[perm_out[o], perm_in[i]]] = 1;
        }
    }
    MaskMatrix::new(junction, entries)
}

/// Generate an unstructured sparse mask: exactly `round(density * cells)`
/// connections chosen uniformly at random. No fan-balance guarantee; provided
/// for comparison against the structured generator.
pub fn generate_unstructured_mask(
    junction: usize,
    n_prev: usize,
    n_next: usize,
    density: f64,
    seed: u64,
) -> Result<MaskMatrix> {
    if n_prev == 0 || n_next == 0 {
        return Err(Error::InvalidParameter("junction sides must be >= 1".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "density must be in (0, 1], got {density}"
        )));
    }
    let cells = n_prev * n_next;
    let keep = ((density * cells as f64).round() as usize).max(1).min(cells);
    let mut flat: Vec<usize> = (0..cells).collect();
    let mut r = rng::stream(seed);
    // partial Fisher-Yates: the first `keep` entries are a uniform sample
    for i in 0..keep {
        let j = r.random_range(i..cells);
        flat.swap(i, j);
    }
    let mut entries = Array2::zeros((n_next, n_prev));
    for &cell in &flat[..keep] {
        entries[[cell / n_prev, cell % n_prev]] = 1;
    }
    MaskMatrix::new(junction, entries)
}

/// One sub-crossbar: a set of succeeding neurons sharing one input set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubArrayBlock {
    pub outputs: Vec<usize>,
    pub inputs: Vec<usize>,
}

/// A packing of a junction's connections onto size-limited crossbars.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubArrayPartition {
    pub blocks: Vec<SubArrayBlock>,
    pub max_rows: usize,
    pub max_cols: usize,
}

impl SubArrayPartition {
    /// Total connections covered; equals the mask popcount.
    pub fn edge_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.outputs.len() * b.inputs.len())
            .sum()
    }
}

/// Pack a sparse junction onto crossbars of at most `max_rows` inputs by
/// `max_cols` outputs. Each succeeding neuron lands in exactly one block;
/// neurons with identical input sets share a block while it fits.
pub fn partition_subarrays(
    mask: &MaskMatrix,
    max_rows: usize,
    max_cols: usize,
) -> Result<SubArrayPartition> {
    if max_rows == 0 || max_cols == 0 {
        return Err(Error::InvalidParameter("crossbar limits must be >= 1".into()));
    }
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new(); // (inputs, outputs)
    for (row, inputs) in mask.row_present().into_iter().enumerate() {
        if inputs.is_empty() {
            continue; // no connections to place
        }
        if inputs.len() > max_rows {
            return Err(Error::PartitionInfeasible {
                fan_in: inputs.len(),
                max_rows,
            });
        }
        match groups.iter_mut().find(|(ins, _)| *ins == inputs) {
            Some((_, outs)) => outs.push(row),
            None => groups.push((inputs, vec![row])),
        }
    }
    let mut blocks = Vec::new();
    for (inputs, outputs) in groups {
        for chunk in outputs.chunks(max_cols) {
            blocks.push(SubArrayBlock {
                outputs: chunk.to_vec(),
                inputs: inputs.clone(),
            });
        }
    }
    Ok(SubArrayPartition {
        blocks,
        max_rows,
        max_cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn density_of_full_mask_is_one() {
        let m = MaskMatrix::full(1, 4, 2).unwrap();
        assert_eq!(junction_density(&m), 1.0);
    }

    #[test]
    fn density_of_alternating_4_to_2_mask() {
        // 2x4 mask with one output per input, two inputs per output
        let m = MaskMatrix::new(1, array![[1, 0, 1, 0], [0, 1, 0, 1]]).unwrap();
        assert_eq!(junction_density(&m), 0.5);
        assert_eq!(
            m.regularity(),
            Some(Regularity {
                fan_out: 1,
                fan_in: 2
            })
        );
    }

    #[test]
    fn density_times_cells_is_popcount() {
        // brute-force popcount oracle over random masks
        for seed in 0..20 {
            let m = generate_unstructured_mask(1, 7, 5, 0.4, seed).unwrap();
            let direct = m
                .entries()
                .iter()
                .filter(|&&e| e == 1)
                .count();
            let via_density = junction_density(&m) * (7.0 * 5.0);
            assert_eq!(direct, via_density.round() as usize);
        }
    }

    #[test]
    fn feasible_densities_4_to_2() {
        let f = feasible_densities(4, 2);
        let triples: Vec<(f64, usize, usize)> =
            f.iter().map(|x| (x.density, x.fan_out, x.fan_in)).collect();
        assert_eq!(triples, vec![(0.5, 1, 2), (1.0, 2, 4)]);
    }

    #[test]
    fn feasible_densities_square_junction() {
        for n in 1..=9 {
            let f = feasible_densities(n, n);
            assert_eq!(f.len(), n);
            for (k, x) in f.iter().enumerate() {
                assert_eq!(x.fan_out, k + 1);
                assert_eq!(x.fan_in, k + 1);
                assert_eq!(x.density, (k + 1) as f64 / n as f64);
            }
        }
    }

    #[test]
    fn feasible_densities_mnist_junction() {
        let f = feasible_densities(196, 100);
        assert!(f
            .iter()
            .any(|x| x.density == 0.25 && x.fan_out == 25 && x.fan_in == 49));
    }

    #[test]
    fn full_density_forces_fully_connected() {
        for seed in [0u64, 1, 99] {
            let m = generate_structured_mask(1, 4, 2, 1.0, seed).unwrap();
            assert_eq!(m.entries(), MaskMatrix::full(1, 4, 2).unwrap().entries());
        }
    }

    #[test]
    fn half_density_4_to_2_has_unit_fan_out() {
        let m = generate_structured_mask(1, 4, 2, 0.5, 3).unwrap();
        let reg = m.regularity().expect("structured");
        assert_eq!(reg.fan_out, 1);
        assert_eq!(reg.fan_in, 2);
    }

    #[test]
    fn generated_masks_balance_over_size_grid() {
        // independent sum oracle over all feasible densities on a size grid
        for n_prev in 2..=12 {
            for n_next in 2..=12 {
                for f in feasible_densities(n_prev, n_next) {
                    let m =
                        generate_structured_mask(1, n_prev, n_next, f.density, 17).unwrap();
                    for row in m.entries().rows() {
                        let s: usize = row.iter().map(|&e| e as usize).sum();
                        assert_eq!(s, f.fan_in, "{n_prev}:{n_next} D={}", f.density);
                    }
                    for col in m.entries().columns() {
                        let s: usize = col.iter().map(|&e| e as usize).sum();
                        assert_eq!(s, f.fan_out, "{n_prev}:{n_next} D={}", f.density);
                    }
                    assert_eq!(junction_density(&m), f.density);
                }
            }
        }
    }

    #[test]
    fn generation_is_pure_in_seed() {
        let a = generate_structured_mask(1, 12, 9, 1.0 / 3.0, 5).unwrap();
        let b = generate_structured_mask(1, 12, 9, 1.0 / 3.0, 5).unwrap();
        assert_eq!(a, b);
        let c = generate_structured_mask(1, 12, 9, 1.0 / 3.0, 6).unwrap();
        assert_ne!(a, c); // overwhelmingly likely for this size
    }

    #[test]
    fn infeasible_density_names_neighbors() {
        let err = generate_structured_mask(1, 4, 4, 0.3, 0).unwrap_err();
        match err {
            Error::InfeasibleDensity { nearest, .. } => {
                assert_eq!(nearest, vec![0.25, 0.5]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unstructured_mask_hits_exact_count() {
        let m = generate_unstructured_mask(1, 10, 10, 0.37, 8).unwrap();
        assert_eq!(m.ones(), 37);
    }

    #[test]
    fn partition_4_to_2_half_density_on_2x1_arrays() {
        let m = generate_structured_mask(1, 4, 2, 0.5, 1).unwrap();
        let p = partition_subarrays(&m, 2, 1).unwrap();
        assert_eq!(p.blocks.len(), 2);
        for b in &p.blocks {
            assert_eq!(b.inputs.len(), 2);
            assert_eq!(b.outputs.len(), 1);
        }
        assert_eq!(p.edge_count(), m.ones());
    }

    #[test]
    fn partition_fc_junction_is_one_block() {
        let m = MaskMatrix::full(1, 5, 3).unwrap();
        let p = partition_subarrays(&m, 5, 3).unwrap();
        assert_eq!(p.blocks.len(), 1);
        assert_eq!(p.blocks[0].inputs.len(), 5);
        assert_eq!(p.blocks[0].outputs.len(), 3);
    }

    #[test]
    fn partition_rejects_oversized_fan_in() {
        let m = MaskMatrix::full(1, 5, 3).unwrap();
        let err = partition_subarrays(&m, 4, 3).unwrap_err();
        assert!(matches!(
            err,
            Error::PartitionInfeasible {
                fan_in: 5,
                max_rows: 4
            }
        ));
    }

    #[test]
    fn partition_covers_every_edge_exactly_once() {
        // coverage-count oracle on random structured masks
        for seed in 0..10 {
            let m = generate_structured_mask(1, 12, 8, 0.25, seed).unwrap();
            let p = partition_subarrays(&m, 12, 8).unwrap();
            let mut covered = Array2::<u8>::zeros((8, 12));
            for b in &p.blocks {
                for &o in &b.outputs {
                    for &i in &b.inputs {
                        covered[[o, i]] += 1;
                    }
                }
            }
            assert_eq!(&covered, m.entries());
        }
    }

    #[test]
    fn mask_text_round_trip_is_bit_exact() {
        let m = generate_structured_mask(2, 9, 6, 1.0 / 3.0, 4).unwrap();
        let text = m.to_text();
        let back = MaskMatrix::from_text(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn mask_text_rejects_garbage() {
        assert!(MaskMatrix::from_text("mask 1 2 2\n10\n2x\n").is_err());
        assert!(MaskMatrix::from_text("mask 1 2 2\n101\n010\n").is_err());
        assert!(MaskMatrix::from_text("junk\n").is_err());
    }

    #[test]
    fn topology_validation() {
        assert!(NetworkTopology::new(vec![4]).is_err());
        assert!(NetworkTopology::new(vec![4, 0, 3]).is_err());
        let t = NetworkTopology::new(vec![23, 80, 60, 13]).unwrap();
        assert_eq!(t.junction_count(), 3);
        assert_eq!(t.junction_shape(1), (80, 60));
        assert_eq!(t.penultimate_junction(), Some(1));
        let two = NetworkTopology::new(vec![3, 2]).unwrap();
        assert_eq!(two.penultimate_junction(), None);
    }

    proptest! {
        #[test]
        fn structured_masks_always_balanced(
            n_prev in 1usize..24,
            n_next in 1usize..24,
            pick in 0usize..6,
            seed in 0u64..1000,
        ) {
            let feasible = feasible_densities(n_prev, n_next);
            let f = feasible[pick % feasible.len()];
            let m = generate_structured_mask(1, n_prev, n_next, f.density, seed).unwrap();
            let reg = m.regularity().expect("generated mask must be structured");
            prop_assert_eq!(reg.fan_out, f.fan_out);
            prop_assert_eq!(reg.fan_in, f.fan_in);
            prop_assert_eq!(n_prev * reg.fan_out, n_next * reg.fan_in);
            prop_assert_eq!(junction_density(&m), f.density);
        }

        #[test]
        fn partition_edge_count_matches_popcount(
            n_prev in 1usize..16,
            n_next in 1usize..16,
            seed in 0u64..100,
        ) {
            let feasible = feasible_densities(n_prev, n_next);
            let f = feasible[seed as usize % feasible.len()];
            let m = generate_structured_mask(1, n_prev, n_next, f.density, seed).unwrap();
            let p = partition_subarrays(&m, n_prev, n_next).unwrap();
            prop_assert_eq!(p.edge_count(), m.ones());
        }
    }
}
