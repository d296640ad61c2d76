//! Constructive choice of the polytope shrink parameter.

use crate::error::{Error, Result};
use crate::game::PlayerChain;
use crate::occupancy::OccupationPolytope;
use crate::projection::euclidean_project;

/// Picks a shrink parameter for one player from its own chain alone.
///
/// Scans the grid `{2^-k / (|S||A|) : k = 1..=40}` from coarse to fine and
/// returns the first (largest) value whose shrunk polytope is feasible and
/// moves no vertex of the unshrunk polytope farther than
/// `epsilon / sqrt(|S||A|)`, the displacement measured by projecting each
/// vertex onto the shrunk set. Returns an error advising a larger `epsilon`
/// when no grid value certifies.
pub fn compute_delta(chain: &PlayerChain, epsilon: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&epsilon) || epsilon == 0.0 {
        return Err(Error::invalid("epsilon must lie in (0, 1)"));
    }
    let dim = chain.dim() as f64;
    let target = epsilon / dim.sqrt();
    let polytope = OccupationPolytope::from_chain(chain);
    let vertices = polytope.vertices()?;
    if vertices.is_empty() {
        return Err(Error::invalid("occupation polytope has no vertices"));
    }
    for k in 1..=40u32 {
        let delta = 2.0f64.powi(-(k as i32)) / dim;
        let Ok(shrunk) = polytope.shrink(delta) else {
            continue;
        };
        let mut worst = 0.0_f64;
        let mut certified = true;
        for v in &vertices {
            match euclidean_project(&shrunk, v) {
                Ok(projected) => {
                    let dist = v
                        .iter()
                        .zip(projected.values())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    worst = worst.max(dist);
                    if worst > target {
                        certified = false;
                        break;
                    }
                }
                Err(_) => {
                    certified = false;
                    break;
                }
            }
        }
        if certified {
            return Ok(delta);
        }
    }
    Err(Error::DeltaGridExhausted { player: 0, target })
}
