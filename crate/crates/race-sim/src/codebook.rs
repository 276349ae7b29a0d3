//! Per-stage hierarchy of angular sub-ranges and the matching unit-norm flat
//! beamforming vectors.
//!
//! A stage-`s` beam is designed so that its response `U^H f` equals a constant
//! `C_(s)` on the grid indices of its sub-range and zero elsewhere. Because
//! the grid steering matrix is unitary, the pseudo-inverse design
//! `f = (U U^H)^{-1} U z` collapses to the synthesis sum `f = U z`, and the
//! unit-norm constraint forces `C_(s) = 1/sqrt(N_s)` for sub-ranges of
//! `N_s` grid points.

use num_complex::Complex64;
use std::ops::Range;

use crate::array_channel::AngleGrid;
use crate::{Error, Result};

/// Branching factors `[K_1, ..., K_S]` for an N-point grid, with
/// `prod(K_s) = N` so the final stage reaches single-grid-point resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    k_vector: Vec<usize>,
    n_antennas: usize,
}

impl StagePlan {
    pub fn new(k_vector: Vec<usize>, n_antennas: usize) -> Result<Self> {
        if k_vector.is_empty() {
            return Err(Error::invalid("StagePlan: k_vector must not be empty"));
        }
        if let Some(&k) = k_vector.iter().find(|&&k| k < 2) {
            return Err(Error::invalid(format!(
                "StagePlan: every K must be >= 2, got {k}"
            )));
        }
        let product: usize = k_vector.iter().product();
        if product != n_antennas {
            return Err(Error::invalid(format!(
                "StagePlan: product of k_vector is {product}, expected n_antennas = {n_antennas}"
            )));
        }
        Ok(Self {
            k_vector,
            n_antennas,
        })
    }

    pub fn k_vector(&self) -> &[usize] {
        &self.k_vector
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn stage_count(&self) -> usize {
        self.k_vector.len()
    }

    /// Branching factor of stage `s` (1-based).
    pub fn branching(&self, stage: usize) -> usize {
        self.k_vector[stage - 1]
    }

    /// Number of sub-ranges at stage `s` (1-based); stage 0 is the root.
    pub fn width(&self, stage: usize) -> usize {
        self.k_vector[..stage].iter().product()
    }

    /// Grid points per sub-range at stage `s`.
    pub fn subrange_len(&self, stage: usize) -> usize {
        self.n_antennas / self.width(stage)
    }

    /// Mandatory scan cost `M_T = sum(K_s^2)`.
    pub fn measurement_total(&self) -> usize {
        self.k_vector.iter().map(|k| k * k).sum()
    }
}

/// One angular sub-range: a contiguous block of grid indices at some stage.
///
/// `branch_path` lists the 1-based child choices taken from the root; the
/// root itself is stage 0 with an empty path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubRange {
    pub stage: usize,
    pub branch_path: Vec<usize>,
    pub grid_indices: Range<usize>,
}

impl SubRange {
    /// Whole grid, before any stage has narrowed it.
    pub fn root(plan: &StagePlan) -> Self {
        Self {
            stage: 0,
            branch_path: Vec::new(),
            grid_indices: 0..plan.n_antennas(),
        }
    }

    pub fn len(&self) -> usize {
        self.grid_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid_indices.is_empty()
    }

    /// Position among the stage's sub-ranges (grid-start / block length).
    pub fn block_index(&self) -> usize {
        match self.len() {
            0 => 0,
            len => self.grid_indices.start / len,
        }
    }
}

/// Splits `parent` into the next stage's `K` contiguous children, ordered by
/// increasing grid index.
pub fn enumerate_subranges(plan: &StagePlan, parent: &SubRange) -> Result<Vec<SubRange>> {
    if parent.stage >= plan.stage_count() {
        return Err(Error::invalid(format!(
            "enumerate_subranges: parent at stage {} is already at final resolution",
            parent.stage
        )));
    }
    let stage = parent.stage + 1;
    let k = plan.branching(stage);
    let child_len = parent.len() / k;
    Ok((0..k)
        .map(|child| {
            let start = parent.grid_indices.start + child * child_len;
            let mut branch_path = parent.branch_path.clone();
            branch_path.push(child + 1);
            SubRange {
                stage,
                branch_path,
                grid_indices: start..start + child_len,
            }
        })
        .collect())
}

/// Unit-norm beamforming vector with flat response `C_(s)` over one
/// sub-range. Transmit and receive sides use identical vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVector {
    pub coefficients: Vec<Complex64>,
    pub subrange: SubRange,
    pub gain_constant: f64,
}

/// Designs the flat beam for `subrange` by solving `U^H f = z` with
/// `z_i = C` on the sub-range and `0` elsewhere.
///
/// On the unitary grid the left pseudo-inverse is `U` itself, so the
/// unnormalized solution is the sum of the in-range steering vectors; the
/// gain constant is read off the numeric norm rather than assumed.
pub fn design_beam(subrange: &SubRange, grid: &AngleGrid) -> Result<BeamVector> {
    if subrange.is_empty() {
        return Err(Error::invalid("design_beam: empty sub-range"));
    }
    let n = grid.n_antennas();
    let mut unnormalized = vec![Complex64::ZERO; n];
    for i in subrange.grid_indices.clone() {
        for (acc, u) in unnormalized.iter_mut().zip(grid.steering(i)) {
            *acc += u;
        }
    }
    let norm = unnormalized
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::NumericFailure(format!(
            "design_beam: degenerate synthesis matrix for sub-range {:?}",
            subrange.grid_indices
        )));
    }
    let coefficients = unnormalized.into_iter().map(|z| z / norm).collect();
    Ok(BeamVector {
        coefficients,
        subrange: subrange.clone(),
        gain_constant: 1.0 / norm,
    })
}

/// All beams of a plan, materialized level by level.
///
/// Stage `s` holds `prod(K_1..K_s)` beams in grid order, so the children of
/// block `b` at stage `s-1` are blocks `b*K_s .. b*K_s + K_s` at stage `s`.
#[derive(Debug, Clone)]
pub struct Codebook {
    grid: AngleGrid,
    plan: StagePlan,
    levels: Vec<Vec<BeamVector>>,
    gain_constants: Vec<f64>,
}

/// Eagerly builds every reachable beam of `plan`.
pub fn build_codebook(plan: StagePlan, grid: AngleGrid) -> Result<Codebook> {
    if grid.n_antennas() != plan.n_antennas() {
        return Err(Error::invalid(format!(
            "build_codebook: grid has {} points but plan expects {}",
            grid.n_antennas(),
            plan.n_antennas()
        )));
    }
    let mut levels: Vec<Vec<BeamVector>> = Vec::with_capacity(plan.stage_count());
    let mut gain_constants = Vec::with_capacity(plan.stage_count());
    let mut parents = vec![SubRange::root(&plan)];
    for stage in 1..=plan.stage_count() {
        let mut level = Vec::with_capacity(plan.width(stage));
        for parent in &parents {
            for child in enumerate_subranges(&plan, parent)? {
                level.push(design_beam(&child, &grid)?);
            }
        }
        // Equal sub-range cardinality per stage implies one shared gain
        // constant; check it instead of assuming it.
        let c = level[0].gain_constant;
        for beam in &level[1..] {
            if (beam.gain_constant - c).abs() > 1e-9 {
                return Err(Error::NumericFailure(format!(
                    "build_codebook: stage {stage} gain constants diverge ({c} vs {})",
                    beam.gain_constant
                )));
            }
        }
        gain_constants.push(c);
        parents = level.iter().map(|b| b.subrange.clone()).collect();
        levels.push(level);
    }
    Ok(Codebook {
        grid,
        plan,
        levels,
        gain_constants,
    })
}

impl Codebook {
    pub fn grid(&self) -> &AngleGrid {
        &self.grid
    }

    pub fn plan(&self) -> &StagePlan {
        &self.plan
    }

    pub fn stage_count(&self) -> usize {
        self.plan.stage_count()
    }

    /// Gain constant `C_(s)` shared by every stage-`s` beam.
    pub fn gain_constant(&self, stage: usize) -> f64 {
        self.gain_constants[stage - 1]
    }

    /// Beam for the `block`-th sub-range (grid order) of stage `s`.
    pub fn beam(&self, stage: usize, block: usize) -> &BeamVector {
        &self.levels[stage - 1][block]
    }

    /// The `K_s` beams covering the children of `parent_block` at stage `s-1`
    /// (`parent_block = 0` at stage 0 being the root).
    pub fn children(&self, stage: usize, parent_block: usize) -> &[BeamVector] {
        let k = self.plan.branching(stage);
        let start = parent_block * k;
        &self.levels[stage - 1][start..start + k]
    }

    /// Exact lookup by branch path: `path = [k_1, ..., k_s]` with 1-based
    /// child choices; the stage is the path length.
    pub fn beam_at(&self, path: &[usize]) -> Result<&BeamVector> {
        if path.is_empty() || path.len() > self.plan.stage_count() {
            return Err(Error::invalid(format!(
                "beam_at: path length {} outside 1..={}",
                path.len(),
                self.plan.stage_count()
            )));
        }
        let mut block = 0usize;
        for (depth, &k) in path.iter().enumerate() {
            let branching = self.plan.branching(depth + 1);
            if k < 1 || k > branching {
                return Err(Error::invalid(format!(
                    "beam_at: choice {k} at stage {} outside 1..={branching}",
                    depth + 1
                )));
            }
            block = block * branching + (k - 1);
        }
        Ok(self.beam(path.len(), block))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> AngleGrid {
        AngleGrid::new(n).unwrap()
    }

    #[test]
    fn plan_rejects_bad_shapes() {
        assert!(StagePlan::new(vec![], 8).is_err());
        assert!(StagePlan::new(vec![2, 2], 8).is_err());
        assert!(StagePlan::new(vec![1, 8], 8).is_err());
        assert!(StagePlan::new(vec![2, 2, 2], 8).is_ok());
    }

    #[test]
    fn first_stage_thirds_cover_the_grid() {
        // Three sub-ranges in the first stage, matching the angular thirds
        // [0, pi/3), [pi/3, 2pi/3), [2pi/3, pi) on a 3-point grid.
        let plan = StagePlan::new(vec![3], 3).unwrap();
        let children = enumerate_subranges(&plan, &SubRange::root(&plan)).unwrap();
        assert_eq!(children.len(), 3);
        for (k, c) in children.iter().enumerate() {
            assert_eq!(c.grid_indices, k..k + 1);
            assert_eq!(c.branch_path, vec![k + 1]);
        }
    }

    #[test]
    fn root_halves_for_binary_plan() {
        let plan = StagePlan::new(vec![2, 2, 2], 8).unwrap();
        let children = enumerate_subranges(&plan, &SubRange::root(&plan)).unwrap();
        assert_eq!(children[0].grid_indices, 0..4);
        assert_eq!(children[1].grid_indices, 4..8);
    }

    #[test]
    fn subrange_halves_again() {
        let plan = StagePlan::new(vec![2, 2, 2], 8).unwrap();
        let root = SubRange::root(&plan);
        let first = enumerate_subranges(&plan, &root).unwrap().remove(0);
        let children = enumerate_subranges(&plan, &first).unwrap();
        assert_eq!(children[0].grid_indices, 0..2);
        assert_eq!(children[1].grid_indices, 2..4);
    }

    #[test]
    fn final_stage_cannot_be_split() {
        let plan = StagePlan::new(vec![2, 2, 2], 8).unwrap();
        let mut node = SubRange::root(&plan);
        for _ in 0..3 {
            node = enumerate_subranges(&plan, &node).unwrap().remove(0);
        }
        assert_eq!(node.len(), 1);
        assert!(enumerate_subranges(&plan, &node).is_err());
    }

    #[test]
    fn designed_beam_matches_dense_pseudo_inverse() {
        // N = 4, sub-range {0, 1}: f has entries 0.5/sqrt(2) * [2, 1+j, 0, 1-j].
        let g = grid(4);
        let sub = SubRange {
            stage: 1,
            branch_path: vec![1],
            grid_indices: 0..2,
        };
        let beam = design_beam(&sub, &g).unwrap();
        let s = 0.5 / 2f64.sqrt();
        let expect = [
            Complex64::new(2.0 * s, 0.0),
            Complex64::new(s, s),
            Complex64::ZERO,
            Complex64::new(s, -s),
        ];
        for (c, e) in beam.coefficients.iter().zip(expect) {
            assert!((c - e).norm() < 1e-12, "got {c}, want {e}");
        }

        // Dense oracle: f = (U U^H)^{-1} U z with z = C * [1, 1, 0, 0].
        let u = nalgebra::DMatrix::from_fn(4, 4, |i, j| g.steering(j)[i]);
        let z = nalgebra::DVector::from_fn(4, |i, _| {
            if i < 2 {
                Complex64::new(beam.gain_constant, 0.0)
            } else {
                Complex64::ZERO
            }
        });
        let gram = &u * u.adjoint();
        let f_oracle = gram.lu().solve(&(&u * z)).unwrap();
        for (c, e) in beam.coefficients.iter().zip(f_oracle.iter()) {
            assert!((c - e).norm() < 1e-9);
        }
    }

    #[test]
    fn stage_one_gain_constant_for_binary_plan() {
        let g = grid(64);
        let sub = SubRange {
            stage: 1,
            branch_path: vec![1],
            grid_indices: 0..32,
        };
        let beam = design_beam(&sub, &g).unwrap();
        assert!((beam.gain_constant - 1.0 / 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn singleton_beam_is_the_steering_vector() {
        let g = grid(8);
        let sub = SubRange {
            stage: 3,
            branch_path: vec![1, 1, 4],
            grid_indices: 3..4,
        };
        let beam = design_beam(&sub, &g).unwrap();
        assert!((beam.gain_constant - 1.0).abs() < 1e-12);
        for (c, u) in beam.coefficients.iter().zip(g.steering(3)) {
            assert!((c - u).norm() < 1e-12);
        }
    }

    fn assert_beam_invariants(cb: &Codebook) {
        for stage in 1..=cb.stage_count() {
            let c = cb.gain_constant(stage);
            for block in 0..cb.plan().width(stage) {
                let beam = cb.beam(stage, block);
                let norm: f64 = beam.coefficients.iter().map(|z| z.norm_sqr()).sum();
                assert!(
                    (norm.sqrt() - 1.0).abs() < 1e-9,
                    "stage {stage} block {block} norm"
                );
                let spectrum = cb.grid().spectrum(&beam.coefficients);
                for (i, resp) in spectrum.iter().enumerate() {
                    if beam.subrange.grid_indices.contains(&i) {
                        assert!(
                            (resp.norm() - c).abs() < 1e-9,
                            "stage {stage} block {block} in-range response {} vs C = {c}",
                            resp.norm()
                        );
                    } else {
                        assert!(
                            resp.norm() < 1e-9,
                            "stage {stage} block {block} leak {} at grid {i}",
                            resp.norm()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn binary_codebook_on_64_has_six_stages() {
        let plan = StagePlan::new(vec![2; 6], 64).unwrap();
        let cb = build_codebook(plan, grid(64)).unwrap();
        assert_eq!(cb.stage_count(), 6);
        assert_eq!(cb.plan().subrange_len(6), 1);
        assert_beam_invariants(&cb);
    }

    #[test]
    fn every_parent_has_k_children() {
        let plan = StagePlan::new(vec![4, 2], 8).unwrap();
        let cb = build_codebook(plan, grid(8)).unwrap();
        assert_eq!(cb.children(1, 0).len(), 4);
        for parent in 0..4 {
            let kids = cb.children(2, parent);
            assert_eq!(kids.len(), 2);
            for kid in kids {
                let parent_range = cb.beam(1, parent).subrange.grid_indices.clone();
                assert!(parent_range.contains(&kid.subrange.grid_indices.start));
            }
        }
    }

    #[test]
    fn beam_lookup_by_path_is_exact() {
        let plan = StagePlan::new(vec![2, 2, 2], 8).unwrap();
        let cb = build_codebook(plan, grid(8)).unwrap();
        let beam = cb.beam_at(&[2, 1, 2]).unwrap();
        assert_eq!(beam.subrange.branch_path, vec![2, 1, 2]);
        assert_eq!(beam.subrange.grid_indices, 5..6);
        assert!(cb.beam_at(&[]).is_err());
        assert!(cb.beam_at(&[3]).is_err());
        assert!(cb.beam_at(&[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn children_partition_their_parents_exhaustively() {
        for (n, k_vector) in [
            (8, vec![2, 2, 2]),
            (16, vec![4, 4]),
            (64, vec![4, 4, 4]),
            (256, vec![2, 2, 2, 2, 2, 2, 2, 2]),
            (256, vec![16, 16]),
        ] {
            let plan = StagePlan::new(k_vector, n).unwrap();
            let mut parents = vec![SubRange::root(&plan)];
            for _ in 1..=plan.stage_count() {
                let mut next = Vec::new();
                for parent in &parents {
                    let children = enumerate_subranges(&plan, parent).unwrap();
                    let mut cursor = parent.grid_indices.start;
                    for child in &children {
                        assert_eq!(child.grid_indices.start, cursor, "gap or overlap");
                        cursor = child.grid_indices.end;
                    }
                    assert_eq!(
                        cursor, parent.grid_indices.end,
                        "children must cover parent"
                    );
                    next.extend(children);
                }
                parents = next;
            }
            assert_eq!(parents.len(), n, "final stage must reach singletons");
            assert!(parents.iter().all(|p| p.len() == 1));
        }
    }

    #[test]
    fn mixed_radix_codebook_keeps_invariants() {
        let plan = StagePlan::new(vec![4, 2], 8).unwrap();
        let cb = build_codebook(plan, grid(8)).unwrap();
        assert_beam_invariants(&cb);
    }
}
