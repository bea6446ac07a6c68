//! Times Gibbs sweeps for each configuration at N = P = 3, T = 200 and ranks 3 and 9.

use std::time::Instant;

use nalgebra::DVector;
use tvptvar::dist::RngStream;
use tvptvar::gibbs::{self, McmcSettings};
use tvptvar::model::{self, LaggedData, ModelConfig, PriorSpec};

fn main() -> tvptvar::Result<()> {
    let priors = PriorSpec::simulation_default(3);
    for (j, rank) in (0..=3).flat_map(|j| [(j, 3), (j, 9)]) {
        let truth = ModelConfig::new(3, 3, j, 3)?;
        let cfg = truth.with_rank(rank)?;
        let q = DVector::from_element(truth.varying.map_or(0, |m| truth.block_len(m)), 0.01);
        let sim = model::generate_dataset(&truth, &priors, &q, 200, 1, 0)?;
        let data = LaggedData::new(&sim.data, 3)?;
        for track in [false, true] {
            let mut settings = McmcSettings::new(500, 100, 1);
            settings.track_marginal = track;
            let start = Instant::now();
            gibbs::run_chain(&data, &cfg, &priors, &settings, &mut RngStream::new(2, 0))?;
            let per = start.elapsed().as_secs_f64() / 500.0;
            println!("{} R={rank}  marginal={track}  {:.3} ms/sweep", cfg.label(), per * 1e3);
        }
    }
    Ok(())
}
