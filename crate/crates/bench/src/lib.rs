//! Shared scenarios for the benchmarks.

use rbm_core::controls::ControlTriple;
use rbm_core::discrete::Problem;
use rbm_core::grid::Wall;
use rbm_core::{BoxGrid, NondimParams};

/// Cube of `n` cells per axis with moderate buoyancy and thermocapillarity.
pub fn problem(n: usize) -> Problem {
    let p = NondimParams { pr: 10.0, ra: 0.5, ma: 0.5, ..NondimParams::default() };
    Problem::standard(BoxGrid::cube(n).expect("valid grid"), p).expect("valid problem")
}

/// Conduction data plus a tangential motion of two side walls.
pub fn moving_walls(problem: &Problem, amp: f64) -> ControlTriple {
    let mut c = problem.conduction_controls();
    let faces = c.g.region.faces.clone();
    for (i, f) in faces.iter().enumerate() {
        let bump = (std::f64::consts::PI * f.centroid[2]).sin();
        match f.wall {
            Wall::XLo => c.g.values[i * 3 + 1] = amp * bump * 4.0 * f.centroid[1] * (1.0 - f.centroid[1]),
            Wall::YHi => c.g.values[i * 3] = -amp * bump * 4.0 * f.centroid[0] * (1.0 - f.centroid[0]),
            _ => {}
        }
    }
    c
}
