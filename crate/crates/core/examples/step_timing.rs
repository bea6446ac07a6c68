//! Times each Gibbs step and the per-draw bookkeeping for TVP-TVAR(3,1).

use std::time::Instant;

use nalgebra::DVector;
use tvptvar::dist::RngStream;
use tvptvar::gibbs::{self, ChainDraws, McmcSettings, QShapeRule};
use tvptvar::model::{self, LaggedData, ModelConfig, PriorSpec};

fn main() -> tvptvar::Result<()> {
    let priors = PriorSpec::simulation_default(3);
    let truth = ModelConfig::new(3, 3, 1, 3)?;
    let q = DVector::from_element(9, 0.01);
    let sim = model::generate_dataset(&truth, &priors, &q, 200, 1, 0)?;
    let data = LaggedData::new(&sim.data, 3)?;
    for rank in [3, 9] {
        let cfg = truth.with_rank(rank)?;
        let mut rng = RngStream::new(3, 0);
        let mut state = gibbs::initial_state(&cfg, &priors, data.len(), &mut rng);
        let mut draws = ChainDraws::new(&cfg, &McmcSettings::default(), data.len(), 3, 0)?;
        let reps = 300;
        let mut t = [0.0f64; 5];
        for _ in 0..reps {
            let s = Instant::now();
            gibbs::step_tv_path(&mut state, &data, &cfg, &priors, &mut rng)?;
            t[0] += s.elapsed().as_secs_f64();
            let s = Instant::now();
            gibbs::step_static_loadings(&mut state, &data, &cfg, &priors, &mut rng)?;
            t[1] += s.elapsed().as_secs_f64();
            let s = Instant::now();
            gibbs::step_omega(&mut state, &data, &cfg, &priors, &mut rng)?;
            t[2] += s.elapsed().as_secs_f64();
            let s = Instant::now();
            gibbs::step_q(&mut state, &cfg, &priors, QShapeRule::HalfLength, &mut rng)?;
            t[3] += s.elapsed().as_secs_f64();
            let s = Instant::now();
            draws.record(&state, &data, &priors)?;
            t[4] += s.elapsed().as_secs_f64();
        }
        println!(
            "R={rank}: path {:.3} static {:.3} omega {:.3} q {:.3} record {:.3} ms",
            t[0] / reps as f64 * 1e3,
            t[1] / reps as f64 * 1e3,
            t[2] / reps as f64 * 1e3,
            t[3] / reps as f64 * 1e3,
            t[4] / reps as f64 * 1e3
        );
    }
    Ok(())
}
