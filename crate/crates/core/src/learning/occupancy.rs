//! Discounted occupancy measures for tabular MDPs, flat and with options.
//!
//! The hierarchical computation splits the occupancy into the discounted
//! distribution over decision points and, per option, the discounted visit
//! counts until termination. Both parts are exact linear solves.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// `transitions[s][a][s']`, initial distribution and discount.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatMdp {
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub b0: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularOption {
    pub initiation: Vec<bool>,
    /// `policy[s][a]`
    pub policy: Vec<Vec<f64>>,
    /// Termination probability on arrival in each state.
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularOptionsMdp {
    pub mdp: FlatMdp,
    pub options: Vec<TabularOption>,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
        return Err(Error::Config(format!("{what} is not a probability row")));
    }
    Ok(())
}

impl FlatMdp {
    pub fn n_states(&self) -> usize {
        self.b0.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1)".into()));
        }
        check_row(&self.b0, "b0")?;
        if self.transitions.len() != n {
            return Err(Error::Config("transition tensor has wrong state count".into()));
        }
        for row in &self.transitions {
            if row.len() != self.n_actions() {
                return Err(Error::Config("ragged transition tensor".into()));
            }
            for p in row {
                if p.len() != n {
                    return Err(Error::Config("transition row has wrong length".into()));
                }
                check_row(p, "transition row")?;
            }
        }
        Ok(())
    }

    /// State-to-state kernel under a flat policy `pi[s][a]`.
    pub fn kernel(&self, pi: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.n_states();
        DMatrix::from_fn(n, n, |s, t| {
            pi[s].iter().zip(&self.transitions[s]).map(|(pa, row)| pa * row[t]).sum()
        })
    }
}

fn check_policy(pi: &[Vec<f64>], n_states: usize, n_actions: usize) -> Result<()> {
    if pi.len() != n_states {
        return Err(Error::Shape {
            expected: n_states,
            got: pi.len(),
        });
    }
    for row in pi {
        if row.len() != n_actions {
            return Err(Error::Shape {
                expected: n_actions,
                got: row.len(),
            });
        }
        check_row(row, "policy row")?;
    }
    Ok(())
}

fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let x = a.lu().solve(&b).ok_or(Error::SingularSystem)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

/// `rho[s][a] = pi(a|s) * sum_t gamma^t P(s_t = s)`.
pub fn flat_occupancy(mdp: &FlatMdp, pi: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    check_policy(pi, mdp.n_states(), mdp.n_actions())?;
    let n = mdp.n_states();
    let p = mdp.kernel(pi);
    // rho_s^T (I - gamma P) = b0^T
    let a = DMatrix::identity(n, n) - p.transpose() * mdp.gamma;
    let rho_s = solve(a, DVector::from_column_slice(&mdp.b0))?;
    Ok((0..n).map(|s| pi[s].iter().map(|pa| pa * rho_s[s]).collect()).collect())
}

fn simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
    let rest: f64 = p[..n - 1].iter().sum();
    p[n - 1] = (1.0 - rest).max(0.0);
    p
}

impl TabularOptionsMdp {
    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        let (n, na) = (self.mdp.n_states(), self.mdp.n_actions());
        if self.options.is_empty() {
            return Err(Error::Config("options MDP needs at least one option".into()));
        }
        for o in &self.options {
            check_policy(&o.policy, n, na)?;
            if o.beta.len() != n || o.initiation.len() != n {
                return Err(Error::Config("option arrays have wrong length".into()));
            }
            if o.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
                return Err(Error::Config("termination probability outside [0, 1]".into()));
            }
        }
        for s in 0..n {
            if !self.options.iter().any(|o| o.initiation[s]) {
                return Err(Error::NoInitiableOption(s));
            }
        }
        Ok(())
    }

    /// Random instance with every state initiable by at least one option.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize, n_options: usize, gamma: f64) -> Self {
        let transitions = (0..n_states)
            .map(|_| (0..n_actions).map(|_| simplex(n_states, rng)).collect())
            .collect();
        let b0 = simplex(n_states, rng);
        let mut options: Vec<TabularOption> = (0..n_options)
            .map(|_| TabularOption {
                initiation: (0..n_states).map(|_| rng.random_bool(0.6)).collect(),
                policy: (0..n_states).map(|_| simplex(n_actions, rng)).collect(),
                beta: (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect(),
            })
            .collect();
        for s in 0..n_states {
            if !options.iter().any(|o| o.initiation[s]) {
                let k = rng.random_range(0..n_options);
                options[k].initiation[s] = true;
            }
        }
        Self {
            mdp: FlatMdp { transitions, b0, gamma },
            options,
        }
    }

    /// Uniform high-level policy over the initiable options of each state.
    pub fn uniform_high_policy(&self) -> Vec<Vec<f64>> {
        (0..self.mdp.n_states())
            .map(|s| {
                let n = self.options.iter().filter(|o| o.initiation[s]).count() as f64;
                self.options.iter().map(|o| if o.initiation[s] { 1.0 / n } else { 0.0 }).collect()
            })
            .collect()
    }

    /// Random high-level policy supported on the initiation sets.
    pub fn random_high_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.mdp.n_states())
            .map(|s| {
                let w: Vec<f64> = self
                    .options
                    .iter()
                    .map(|o| if o.initiation[s] { rng.random_range(0.1..1.0) } else { 0.0 })
                    .collect();
                let z: f64 = w.iter().sum();
                w.iter().map(|x| x / z).collect()
            })
            .collect()
    }
}

/// Decision-point occupancy of (h, o) and per-option discounted visit matrices.
pub struct HierarchicalParts {
    /// `eta[h]`: discounted probability of making a decision in `h`.
    pub eta: Vec<f64>,
    /// `visits[o][(h, s)]`: discounted visits to `s` while `o` runs, started in `h`.
    pub visits: Vec<DMatrix<f64>>,
}

pub fn hierarchical_parts(omdp: &TabularOptionsMdp, pi_h: &[Vec<f64>]) -> Result<HierarchicalParts> {
    omdp.validate()?;
    let mdp = &omdp.mdp;
    let n = mdp.n_states();
    let k = omdp.options.len();
    check_policy(pi_h, n, k)?;
    for (s, row) in pi_h.iter().enumerate() {
        for (o, opt) in omdp.options.iter().enumerate() {
            if row[o] > 0.0 && !opt.initiation[s] {
                return Err(Error::Config(format!(
                    "high-level policy picks option {o} outside its initiation set"
                )));
            }
        }
    }
    let gamma = mdp.gamma;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut visits = Vec::with_capacity(k);
    for (o, opt) in omdp.options.iter().enumerate() {
        let p = mdp.kernel(&opt.policy);
        let cont = DMatrix::from_diagonal(&DVector::from_iterator(n, opt.beta.iter().map(|b| 1.0 - b)));
        let stop = DMatrix::from_diagonal(&DVector::from_column_slice(&opt.beta));
        let m = &p * cont;
        let d = (&eye - m * gamma).lu().try_inverse().ok_or(Error::SingularSystem)?;
        let pi_o = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|s| pi_h[s][o])));
        g += pi_o * &d * &p * stop * gamma;
        visits.push(d);
    }
    let eta = solve((eye - g).transpose(), DVector::from_column_slice(&mdp.b0))?;
    Ok(HierarchicalParts {
        eta: eta.iter().copied().collect(),
        visits,
    })
}

/// `rho(s,a) = sum_{h,o} eta(h) pi_h(o|h) D_o(h,s) pi_o(a|s)`.
pub fn hierarchical_occupancy(omdp: &TabularOptionsMdp, pi_h: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let parts = hierarchical_parts(omdp, pi_h)?;
    let n = omdp.mdp.n_states();
    let na = omdp.mdp.n_actions();
    let mut rho = vec![vec![0.0; na]; n];
    for (o, opt) in omdp.options.iter().enumerate() {
        let d = &parts.visits[o];
        for s in 0..n {
            let w: f64 = (0..n).map(|h| parts.eta[h] * pi_h[h][o] * d[(h, s)]).sum();
            if w == 0.0 {
                continue;
            }
            for (r, p) in rho[s].iter_mut().zip(&opt.policy[s]) {
                *r += w * p;
            }
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn absorbing_state() {
        let mdp = FlatMdp {
            transitions: vec![vec![vec![1.0]]],
            b0: vec![1.0],
            gamma: 0.9,
        };
        let rho = flat_occupancy(&mdp, &[vec![1.0]]).unwrap();
        assert!((rho[0][0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_terminating_option_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut omdp = TabularOptionsMdp::random(&mut rng, 5, 3, 1, 0.9);
        omdp.options[0].beta = vec![1.0; 5];
        omdp.options[0].initiation = vec![true; 5];
        let pi_h = vec![vec![1.0]; 5];
        let h = hierarchical_occupancy(&omdp, &pi_h).unwrap();
        let f = flat_occupancy(&omdp.mdp, &omdp.options[0].policy).unwrap();
        for (a, b) in h.iter().flatten().zip(f.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn no_initiable_option() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut omdp = TabularOptionsMdp::random(&mut rng, 3, 2, 2, 0.9);
        for o in &mut omdp.options {
            o.initiation[1] = false;
        }
        let pi_h = vec![vec![0.5, 0.5]; 3];
        assert!(matches!(hierarchical_occupancy(&omdp, &pi_h), Err(Error::NoInitiableOption(1))));
    }

    #[test]
    fn rejects_bad_rows() {
        let mdp = FlatMdp {
            transitions: vec![vec![vec![0.5]]],
            b0: vec![1.0],
            gamma: 0.9,
        };
        assert!(flat_occupancy(&mdp, &[vec![1.0]]).is_err());
    }
}
