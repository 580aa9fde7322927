use ndarray::Array2;

use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::expfam::ConjugateFamily;
use crate::sampling::{categorical, dirichlet, rng_for};

/// Data drawn from the mixed membership generative process, with the latent
/// truth kept for recovery checks.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: CountMatrix,
    /// N × G memberships `τ_n`.
    pub tau: Array2<f64>,
    /// N × M profile index of every cell.
    pub z: Array2<usize>,
}

/// `τ_n ~ Dirichlet(δ)`, `Z_nm ~ Multinomial(1, τ_n)`, `X_nm ~ p(· | θ_{Z_nm, m})`.
///
/// The number of attributes is `theta.ncols()`.
pub fn generate<F: ConjugateFamily>(
    n_obs: usize,
    family: &F,
    theta: &Array2<F::Param>,
    delta: &[f64],
    seed: u64,
) -> Result<Simulation> {
    let (n_prof, n_attr) = theta.dim();
    if n_obs == 0 || n_attr == 0 {
        return Err(Error::Shape("simulation needs N >= 1 and M >= 1".into()));
    }
    if delta.len() != n_prof {
        return Err(Error::Shape(format!("theta has {n_prof} profiles, delta has {}", delta.len())));
    }
    for t in theta {
        family.check_param(t)?;
    }
    let mut rng = rng_for(seed, 0);
    let mut tau = Array2::zeros((n_obs, n_prof));
    let mut z = Array2::zeros((n_obs, n_attr));
    let mut values = Array2::zeros((n_obs, n_attr));
    for n in 0..n_obs {
        let tau_n = dirichlet(delta, &mut rng)?;
        for m in 0..n_attr {
            let g = categorical(&tau_n, &mut rng);
            z[[n, m]] = g;
            values[[n, m]] = family.sample(&theta[[g, m]], &mut rng);
        }
        for (g, v) in tau_n.into_iter().enumerate() {
            tau[[n, g]] = v;
        }
    }
    Ok(Simulation {
        data: CountMatrix::from_values(values)?,
        tau,
        z,
    })
}
