//! One module per subcommand. Each exposes a serde configuration whose
//! `Default` is the reference experiment, and a `run` function returning a
//! [`Report`](crate::report::Report).

pub mod counterexamples;
pub mod deepc;
pub mod hankel;
pub mod moments;
pub mod ocp;
pub mod simulate;
pub mod stochastic;

use behavioral_core::rng::SeededRng;
use behavioral_core::system::{external_projection, simulate, Dynamics, LtiSystem, System};
use nalgebra::DVector;

use crate::config::{InputSignal, SystemSpec};
use crate::error::{CliError, Result};

pub(crate) fn resolve_lti(spec: &SystemSpec) -> Result<LtiSystem> {
    match spec.resolve()? {
        System::Lti(sys) => Ok(sys),
        System::Poly(_) => Err(CliError::Config("this command needs an LTI system".into())),
    }
}

/// Identification data: `n` inputs from `signal`, then `x_0 ~ N(0, I)`, all
/// from `rng` in that order. Returns the samples `w_t = (u_t, y_t)` and the
/// inputs.
pub(crate) fn identification_data(
    sys: &LtiSystem,
    signal: &InputSignal,
    rng: &mut SeededRng,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let u = signal.generate(rng, sys.input_dim(), n)?;
    let x0 = rng.normal_vec(sys.state_dim());
    let traj = simulate(sys, &x0, &u)?;
    Ok((external_projection(&traj).windows().to_vec(), u))
}

/// A stacked window of length `depth` with Gaussian inputs and initial state.
pub(crate) fn fresh_window(sys: &LtiSystem, rng: &mut SeededRng, depth: usize) -> Result<DVector<f64>> {
    let signal = InputSignal::Gaussian { std: 1.0 };
    let (w, _) = identification_data(sys, &signal, rng, depth)?;
    Ok(DVector::from_vec(w.concat()))
}
