//! 1D meshes with per-element multirate levels.
//!
//! Nonuniform meshes are described as a list of regions, each a run of
//! equally sized elements at one refinement level; level l elements are a
//! factor 2^l smaller than level 0 ones, so adjacent size ratios stay in
//! {1/2, 1, 2} when adjacent levels differ by at most one.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Region {
    pub level: u32,
    pub count: usize,
}

/// Declarative mesh description, serializable into run configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub regions: Vec<Region>,
    #[serde(default = "default_true")]
    pub periodic: bool,
}

fn default_true() -> bool {
    true
}

impl MeshSpec {
    pub fn uniform(x_min: f64, x_max: f64, count: usize) -> MeshSpec {
        MeshSpec {
            x_min,
            x_max,
            regions: vec![Region { level: 0, count }],
            periodic: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh1D {
    /// K+1 element edges, strictly increasing.
    pub edges: Vec<f64>,
    pub sizes: Vec<f64>,
    pub levels: Vec<u32>,
    pub periodic: bool,
}

impl Mesh1D {
    pub fn num_elements(&self) -> usize {
        self.sizes.len()
    }

    pub fn max_level(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    pub fn uniform(x_min: f64, x_max: f64, count: usize) -> Mesh1D {
        build_nonuniform_mesh(&MeshSpec::uniform(x_min, x_max, count)).unwrap()
    }
}

/// Builds a mesh from a region list. Levels refine by powers of two; the
/// base size is chosen so the regions exactly tile [x_min, x_max].
///
/// Fails with `InvalidSpec` when adjacent regions (including the periodic
/// wrap) differ by more than one level, or when a region is too narrow to
/// host the one-element fast and slow buffers it must donate to each
/// adjacent finer region (count >= 1 + 2 * finer-adjacent sides, and
/// always >= 3 on multi-region meshes, matching a buffer size of two).
pub fn build_nonuniform_mesh(spec: &MeshSpec) -> Result<Mesh1D> {
    if spec.regions.is_empty() {
        return Err(Error::InvalidSpec("mesh needs at least one region".into()));
    }
    if !(spec.x_max > spec.x_min) {
        return Err(Error::InvalidSpec(format!(
            "empty domain [{}, {}]",
            spec.x_min, spec.x_max
        )));
    }
    let nr = spec.regions.len();
    for (r, reg) in spec.regions.iter().enumerate() {
        if reg.count == 0 {
            return Err(Error::InvalidSpec(format!("region {r} has zero elements")));
        }
        let mut finer_sides = 0;
        let mut check_neighbor = |other: &Region| -> Result<()> {
            let diff = reg.level.abs_diff(other.level);
            if diff > 1 {
                return Err(Error::InvalidSpec(format!(
                    "adjacent regions jump {diff} levels ({} to {})",
                    reg.level, other.level
                )));
            }
            if other.level > reg.level {
                finer_sides += 1;
            }
            Ok(())
        };
        if r > 0 || (spec.periodic && nr > 1) {
            check_neighbor(&spec.regions[(r + nr - 1) % nr])?;
        }
        if r + 1 < nr || (spec.periodic && nr > 1) {
            check_neighbor(&spec.regions[(r + 1) % nr])?;
        }
        let needed = if nr > 1 { (1 + 2 * finer_sides).max(3) } else { 1 };
        if reg.count < needed {
            return Err(Error::InvalidSpec(format!(
                "region {r} at level {} has {} elements, needs at least {needed} \
                 to honor the buffer-size constraints",
                reg.level, reg.count
            )));
        }
    }

    // base size from exact tiling: sum_r count_r * h0 / 2^level_r = length
    let length = spec.x_max - spec.x_min;
    let weight: f64 = spec
        .regions
        .iter()
        .map(|r| r.count as f64 / (1u64 << r.level) as f64)
        .sum();
    let h0 = length / weight;

    let total: usize = spec.regions.iter().map(|r| r.count).sum();
    let mut edges = Vec::with_capacity(total + 1);
    let mut sizes = Vec::with_capacity(total);
    let mut levels = Vec::with_capacity(total);
    edges.push(spec.x_min);
    let mut x = spec.x_min;
    for reg in &spec.regions {
        let h = h0 / (1u64 << reg.level) as f64;
        for _ in 0..reg.count {
            x += h;
            edges.push(x);
            sizes.push(h);
            levels.push(reg.level);
        }
    }
    // snap the accumulated right end; `sizes` stays exactly h0 / 2^level so
    // that adjacent size ratios are exact powers of two
    let drift = spec.x_max - x;
    if drift.abs() > 1e-10 * length {
        return Err(Error::InvalidSpec(format!("mesh tiling drift {drift:.3e}")));
    }
    *edges.last_mut().unwrap() = spec.x_max;

    Ok(Mesh1D {
        edges,
        sizes,
        levels,
        periodic: spec.periodic,
    })
}
