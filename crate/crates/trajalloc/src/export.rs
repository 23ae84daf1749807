//! Sampled trajectory export for plotting.

use std::io::Write;

use trajalloc_core::polynomial::PiecewiseTrajectory;

/// Writes `t, x, y, z, vx, vy, vz, ax, ay, az` rows at `rate` samples per
/// second, always including both endpoints.
pub fn write_trajectory_csv<W: Write>(
    w: W,
    traj: &PiecewiseTrajectory,
    rate: f64,
) -> anyhow::Result<()> {
    anyhow::ensure!(
        rate > 0.0 && rate.is_finite(),
        "sample rate must be positive"
    );
    let total = traj.total_duration();
    let steps = (total * rate).ceil().max(1.0) as usize;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"])?;
    for k in 0..=steps {
        let t = (k as f64 / rate).min(total);
        let mut row = vec![t];
        for order in 0..3 {
            row.extend(traj.eval(t, order)?);
        }
        out.serialize(row)?;
        if t >= total {
            break;
        }
    }
    out.flush()?;
    Ok(())
}
