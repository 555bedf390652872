//! Exact computations on finite MDPs.
//!
//! States are indexed `0..nS`; when a policy has to be queried, state `s` is
//! presented as the one-hot vector `e_s`. Tables follow the index order named
//! on each type.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Discount, Policy, StateVec};
use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    #[serde(rename = "nS")]
    pub num_states: usize,
    #[serde(rename = "nA")]
    pub num_actions: usize,
    /// `P[s][a][s']`.
    #[serde(rename = "P")]
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `r[s][a]`.
    #[serde(rename = "r")]
    pub reward: Vec<Vec<f64>>,
    /// `b[s][a]`, strictly positive rows summing to one.
    #[serde(rename = "b")]
    pub behavior: Vec<Vec<f64>>,
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        behavior: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, Vec::len);
        let m = TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            behavior,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TabularMdp = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.num_states, self.num_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp(
                "need at least one state and action".into(),
            ));
        }
        let bad = |msg: String| Err(Error::InvalidMdp(msg));
        if self.transition.len() != ns || self.reward.len() != ns || self.behavior.len() != ns {
            return bad("table lengths disagree with nS".into());
        }
        for s in 0..ns {
            if self.transition[s].len() != na
                || self.reward[s].len() != na
                || self.behavior[s].len() != na
            {
                return bad(format!("state {s}: tables disagree with nA"));
            }
            for a in 0..na {
                let row = &self.transition[s][a];
                if row.len() != ns {
                    return bad(format!("P[{s}][{a}] has length {}", row.len()));
                }
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return bad(format!("P[{s}][{a}] has a negative or non-finite entry"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return bad(format!("P[{s}][{a}] sums to {total}, not 1"));
                }
                if !self.reward[s][a].is_finite() {
                    return bad(format!("r[{s}][{a}] is not finite"));
                }
            }
            let b = &self.behavior[s];
            if b.iter().any(|&p| !(p > 0.0)) {
                return bad(format!("b[{s}] must be strictly positive"));
            }
            let total: f64 = b.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return bad(format!("b[{s}] sums to {total}, not 1"));
            }
        }
        Ok(())
    }

    pub fn state(&self, s: usize) -> StateVec {
        StateVec::one_hot(s, self.num_states)
    }

    /// Two states, two actions; action `a` moves to state `a` and pays `a`.
    pub fn chain2() -> Self {
        let det = |to: usize| {
            let mut row = vec![0.0; 2];
            row[to] = 1.0;
            row
        };
        TabularMdp::new(
            vec![vec![det(0), det(1)], vec![det(0), det(1)]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .expect("static MDP")
    }

    /// One state, two actions, reward equal to the action id.
    pub fn single_state() -> Self {
        TabularMdp::new(
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![0.0, 1.0]],
            vec![vec![0.5, 0.5]],
        )
        .expect("static MDP")
    }

    /// `pi[s][a]` evaluated on one-hot states.
    pub fn policy_table(&self, pi: &dyn Policy) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|s| pi.probabilities(&self.state(s)))
            .collect()
    }

    fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    /// `P_pi[(s,a),(s',a')] = P[s][a][s'] pi(a'|s')`.
    fn pair_transition(&self, pi_table: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.num_states * self.num_actions;
        let mut m = DMatrix::zeros(n, n);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for (s2, &p) in self.transition[s][a].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for a2 in 0..self.num_actions {
                        m[(self.pair(s, a), self.pair(s2, a2))] += p * pi_table[s2][a2];
                    }
                }
            }
        }
        m
    }

    /// State chain under the behavior policy, `M[s][s']`.
    pub fn behavior_chain(&self) -> Vec<Vec<f64>> {
        let ns = self.num_states;
        let mut m = vec![vec![0.0; ns]; ns];
        for s in 0..ns {
            for a in 0..self.num_actions {
                let b = self.behavior[s][a];
                for (s2, &p) in self.transition[s][a].iter().enumerate() {
                    m[s][s2] += b * p;
                }
            }
        }
        m
    }
}

/// Exact Q table, indexed `q[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactQ {
    pub q: Vec<Vec<f64>>,
}

impl ExactQ {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s][a]
    }

    pub fn max_abs_diff(&self, other: &ExactQ) -> f64 {
        self.q
            .iter()
            .flatten()
            .zip(other.q.iter().flatten())
            .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
    }

    pub fn greedy_table(&self) -> Vec<usize> {
        self.q
            .iter()
            .map(|row| crate::domain::argmax(row))
            .collect()
    }
}

/// Q-function view of a table: queried on one-hot states.
impl crate::domain::QFunction for ExactQ {
    fn num_actions(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    fn values(&self, state: &[f64]) -> Vec<f64> {
        self.q[crate::domain::argmax(state)].clone()
    }
}

/// One application of the Bellman optimality operator.
pub fn bellman_optimality(m: &TabularMdp, gamma: Discount, q: &ExactQ) -> ExactQ {
    let g = gamma.value();
    let v: Vec<f64> =
        q.q.iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
    let q = (0..m.num_states)
        .map(|s| {
            (0..m.num_actions)
                .map(|a| {
                    let ev: f64 = m.transition[s][a]
                        .iter()
                        .zip(&v)
                        .map(|(p, vs)| p * vs)
                        .sum();
                    m.reward[s][a] + g * ev
                })
                .collect()
        })
        .collect();
    ExactQ { q }
}

/// Iterates the optimality operator until the sweep gap is at most `tol`.
pub fn value_iteration(m: &TabularMdp, gamma: Discount, tol: f64) -> ExactQ {
    let mut q = ExactQ {
        q: vec![vec![0.0; m.num_actions]; m.num_states],
    };
    loop {
        let next = bellman_optimality(m, gamma, &q);
        let gap = next.max_abs_diff(&q);
        q = next;
        if gap <= tol {
            return q;
        }
    }
}

/// Solves `Q = r + gamma P Pi Q` directly.
pub fn policy_q(m: &TabularMdp, pi: &dyn Policy, gamma: Discount) -> Result<ExactQ> {
    let table = m.policy_table(pi);
    let n = m.num_states * m.num_actions;
    let p = m.pair_transition(&table);
    let lhs = DMatrix::<f64>::identity(n, n) - p * gamma.value();
    let rhs = DVector::from_iterator(n, m.reward.iter().flatten().copied());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular policy-evaluation system".into()))?;
    Ok(ExactQ {
        q: (0..m.num_states)
            .map(|s| (0..m.num_actions).map(|a| sol[m.pair(s, a)]).collect())
            .collect(),
    })
}

/// Stationary law of the behavior chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryLaw {
    /// `mu[s]`.
    pub state: Vec<f64>,
    /// `p_inf[s][a] = mu[s] b[s][a]`.
    pub pair: Vec<Vec<f64>>,
}

pub fn stationary_distribution(m: &TabularMdp) -> Result<StationaryLaw> {
    let chain = m.behavior_chain();
    let ns = m.num_states;
    let mut mu = vec![1.0 / ns as f64; ns];
    let mut converged = false;
    for _ in 0..STATIONARY_MAX_SWEEPS {
        let mut next = vec![0.0; ns];
        for (s, row) in chain.iter().enumerate() {
            for (s2, &p) in row.iter().enumerate() {
                next[s2] += mu[s] * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let gap = next
            .iter()
            .zip(&mu)
            .fold(0.0, |g, (a, b)| f64::max(g, (a - b).abs()));
        mu = next;
        if gap <= STATIONARY_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotErgodic(format!(
            "power iteration did not converge in {STATIONARY_MAX_SWEEPS} sweeps"
        )));
    }
    if let Some(s) = mu.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NotErgodic(format!(
            "state {s} has zero stationary mass"
        )));
    }
    let pair = (0..ns)
        .map(|s| m.behavior[s].iter().map(|b| mu[s] * b).collect())
        .collect();
    Ok(StationaryLaw { state: mu, pair })
}

/// `p_gamma(a', s' | a0, s0)` indexed `[a'][s']`.
pub fn discounted_visitation(
    m: &TabularMdp,
    pi: &dyn Policy,
    gamma: Discount,
    a0: usize,
    s0: usize,
) -> Vec<Vec<f64>> {
    let table = m.policy_table(pi);
    let solver = VisitationSolver::new(m, &table, gamma);
    solver.solve(m, &table, a0, s0)
}

struct VisitationSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    gamma: f64,
}

impl VisitationSolver {
    fn new(m: &TabularMdp, table: &[Vec<f64>], gamma: Discount) -> Self {
        let n = m.num_states * m.num_actions;
        let p = m.pair_transition(table);
        let lhs = (DMatrix::<f64>::identity(n, n) - p * gamma.value()).transpose();
        VisitationSolver {
            lu: lhs.lu(),
            gamma: gamma.value(),
        }
    }

    fn solve(&self, m: &TabularMdp, table: &[Vec<f64>], a0: usize, s0: usize) -> Vec<Vec<f64>> {
        let n = m.num_states * m.num_actions;
        // first-step law p_1(a', s') = P[s0][a0][s'] pi(a'|s')
        let mut p1 = DVector::zeros(n);
        for (s2, &p) in m.transition[s0][a0].iter().enumerate() {
            for a2 in 0..m.num_actions {
                p1[m.pair(s2, a2)] = (1.0 - self.gamma) * p * table[s2][a2];
            }
        }
        let x = self.lu.solve(&p1).expect("I - gamma P is nonsingular");
        (0..m.num_actions)
            .map(|a2| (0..m.num_states).map(|s2| x[m.pair(s2, a2)]).collect())
            .collect()
    }
}

/// `omega(a', s' | a, s)`, indexed `[a'][s'][a][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioTable {
    pub omega: Vec<Vec<Vec<Vec<f64>>>>,
}

impl DensityRatioTable {
    pub fn get(&self, a2: usize, s2: usize, a: usize, s: usize) -> f64 {
        self.omega[a2][s2][a][s]
    }
}

pub fn exact_density_ratio(
    m: &TabularMdp,
    pi: &dyn Policy,
    gamma: Discount,
) -> Result<DensityRatioTable> {
    let law = stationary_distribution(m)?;
    let table = m.policy_table(pi);
    let solver = VisitationSolver::new(m, &table, gamma);
    let (ns, na) = (m.num_states, m.num_actions);
    let mut omega = vec![vec![vec![vec![0.0; ns]; na]; ns]; na];
    for a in 0..na {
        for s in 0..ns {
            let pg = solver.solve(m, &table, a, s);
            for a2 in 0..na {
                for s2 in 0..ns {
                    omega[a2][s2][a][s] = pg[a2][s2] / law.pair[s2][a2];
                }
            }
        }
    }
    Ok(DensityRatioTable { omega })
}

/// State-level ratio `w(s' | a, s) = p_gamma(s' | a, s) / mu(s')`, indexed `[s'][a][s]`.
///
/// Together with `pi(a'|s') / b(a'|s')` it factorizes the pair ratio exactly.
pub fn exact_state_ratio(
    m: &TabularMdp,
    pi: &dyn Policy,
    gamma: Discount,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let law = stationary_distribution(m)?;
    let table = m.policy_table(pi);
    let solver = VisitationSolver::new(m, &table, gamma);
    let (ns, na) = (m.num_states, m.num_actions);
    let mut w = vec![vec![vec![0.0; ns]; na]; ns];
    for a in 0..na {
        for s in 0..ns {
            let pg = solver.solve(m, &table, a, s);
            for s2 in 0..ns {
                let marginal: f64 = (0..na).map(|a2| pg[a2][s2]).sum();
                w[s2][a][s] = marginal / law.state[s2];
            }
        }
    }
    Ok(w)
}

/// `tau[a][s] = Q*(a, s) - Q*(a0, s)`.
pub fn exact_contrast(m: &TabularMdp, gamma: Discount, a0: usize) -> Vec<Vec<f64>> {
    let q = value_iteration(m, gamma, 1e-13);
    (0..m.num_actions)
        .map(|a| (0..m.num_states).map(|s| q.q[s][a] - q.q[s][a0]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{greedy_policy, ActionId, ConstantPolicy, TabularPolicy};

    fn g(x: f64) -> Discount {
        Discount::new(x).unwrap()
    }

    fn always(a: usize, n: usize) -> ConstantPolicy {
        ConstantPolicy {
            action: ActionId(a),
            num_actions: n,
        }
    }

    #[test]
    fn chain2_optimal_q() {
        let q = value_iteration(&TabularMdp::chain2(), g(0.5), 1e-12);
        for s in 0..2 {
            assert!((q.get(s, 0) - 1.0).abs() < 1e-11);
            assert!((q.get(s, 1) - 2.0).abs() < 1e-11);
        }
        // cross-check by a fixed 100 sweeps
        let mut q2 = ExactQ {
            q: vec![vec![0.0; 2]; 2],
        };
        for _ in 0..100 {
            q2 = bellman_optimality(&TabularMdp::chain2(), g(0.5), &q2);
        }
        assert!(q.max_abs_diff(&q2) < 1e-11);
    }

    #[test]
    fn zero_discount_gives_reward() {
        let m = crate::envs::gen_random_tabular(4, 3, 9, 1.0);
        let q = value_iteration(&m, g(0.0), 1e-12);
        assert_eq!(q.q, m.reward);
        let pq = policy_q(&m, &always(1, 3), g(0.0)).unwrap();
        assert!(pq
            .q
            .iter()
            .flatten()
            .zip(m.reward.iter().flatten())
            .all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn single_state_optimal_q() {
        let q = value_iteration(&TabularMdp::single_state(), g(0.5), 1e-12);
        assert!((q.get(0, 0) - 1.0).abs() < 1e-11);
        assert!((q.get(0, 1) - 2.0).abs() < 1e-11);
    }

    #[test]
    fn chain2_policy_values() {
        let m = TabularMdp::chain2();
        let q0 = policy_q(&m, &always(0, 2), g(0.5)).unwrap();
        for s in 0..2 {
            assert!(q0.get(s, 0).abs() < 1e-12);
            assert!((q0.get(s, 1) - 1.0).abs() < 1e-12);
        }
        let q1 = policy_q(&m, &always(1, 2), g(0.5)).unwrap();
        let star = value_iteration(&m, g(0.5), 1e-13);
        assert!(q1.max_abs_diff(&star) < 1e-10);
    }

    #[test]
    fn stationary_laws() {
        let law = stationary_distribution(&TabularMdp::chain2()).unwrap();
        for row in &law.pair {
            for &p in row {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
        let law = stationary_distribution(&TabularMdp::single_state()).unwrap();
        assert_eq!(law.pair, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn periodic_chain_is_rejected() {
        // bipartite chain 0 -> {1, 2} -> 0 has period 2 and oscillates from a uniform start
        let m = TabularMdp::new(
            vec![
                vec![vec![0.0, 0.5, 0.5]],
                vec![vec![1.0, 0.0, 0.0]],
                vec![vec![1.0, 0.0, 0.0]],
            ],
            vec![vec![0.0]; 3],
            vec![vec![1.0]; 3],
        )
        .unwrap();
        assert!(matches!(
            stationary_distribution(&m),
            Err(Error::NotErgodic(_))
        ));
    }

    #[test]
    fn chain2_visitation() {
        let m = TabularMdp::chain2();
        let pi = always(1, 2);
        for s in 0..2 {
            let p = discounted_visitation(&m, &pi, g(0.5), 0, s);
            assert!((p[1][0] - 0.5).abs() < 1e-12);
            assert!((p[1][1] - 0.5).abs() < 1e-12);
            assert!(p[0][0].abs() < 1e-12 && p[0][1].abs() < 1e-12);
            let p = discounted_visitation(&m, &pi, g(0.5), 1, s);
            assert!((p[1][1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chain2_and_single_state_ratios() {
        let m = TabularMdp::chain2();
        let w = exact_density_ratio(&m, &always(1, 2), g(0.5)).unwrap();
        for s in 0..2 {
            assert!((w.get(1, 0, 0, s) - 2.0).abs() < 1e-10);
            assert!((w.get(1, 1, 0, s) - 2.0).abs() < 1e-10);
            assert!((w.get(1, 1, 1, s) - 4.0).abs() < 1e-10);
            for s2 in 0..2 {
                for a in 0..2 {
                    assert!(w.get(0, s2, a, s).abs() < 1e-12);
                }
            }
        }
        let w = exact_density_ratio(&TabularMdp::single_state(), &always(1, 2), g(0.5)).unwrap();
        for a in 0..2 {
            assert!((w.get(1, 0, a, 0) - 2.0).abs() < 1e-10);
            assert!(w.get(0, 0, a, 0).abs() < 1e-12);
        }
    }

    #[test]
    fn chain2_contrast() {
        let m = TabularMdp::chain2();
        let tau = exact_contrast(&m, g(0.5), 0);
        for s in 0..2 {
            assert!((tau[1][s] - 1.0).abs() < 1e-11);
            assert_eq!(tau[0][s], 0.0);
        }
        let tau0 = exact_contrast(&m, g(0.0), 0);
        for s in 0..2 {
            assert_eq!(tau0[1][s], m.reward[s][1] - m.reward[s][0]);
        }
    }

    #[test]
    fn bad_rows_are_rejected() {
        let mut m = TabularMdp::chain2();
        m.transition[0][1] = vec![0.3, 0.3];
        assert!(matches!(m.validate(), Err(Error::InvalidMdp(_))));
        let mut m = TabularMdp::chain2();
        m.behavior[1] = vec![1.0, 0.0];
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_field_names() {
        let text = serde_json::to_string(&TabularMdp::single_state()).unwrap();
        for key in ["\"nS\"", "\"nA\"", "\"P\"", "\"r\"", "\"b\""] {
            assert!(text.contains(key), "{text}");
        }
        assert_eq!(
            TabularMdp::from_json(&text).unwrap(),
            TabularMdp::single_state()
        );
    }

    fn random_policy(m: &TabularMdp, seed: u64) -> TabularPolicy {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, &[]);
        let probs = (0..m.num_states)
            .map(|_| {
                let raw: Vec<f64> = (0..m.num_actions)
                    .map(|_| rng.gen::<f64>() + 0.05)
                    .collect();
                let t: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / t).collect()
            })
            .collect();
        TabularPolicy::new(probs).unwrap()
    }

    #[test]
    fn contraction_and_optimality_on_random_instances() {
        for seed in 0..10 {
            let m = crate::envs::gen_random_tabular(6, 3, seed, 1.0);
            let gamma = g(0.8);
            let mut q = ExactQ {
                q: vec![vec![0.0; 3]; 6],
            };
            let mut prev_gap = f64::INFINITY;
            for _ in 0..30 {
                let next = bellman_optimality(&m, gamma, &q);
                let gap = next.max_abs_diff(&q);
                assert!(gap <= 0.8 * prev_gap + 1e-12);
                prev_gap = gap;
                q = next;
            }
            let star = value_iteration(&m, gamma, 1e-12);
            let pq = policy_q(&m, &greedy_policy(star.clone()), gamma).unwrap();
            assert!(pq.max_abs_diff(&star) < 1e-8);
        }
    }

    #[test]
    fn visitation_normalizes_and_ratio_factorizes() {
        for seed in 0..5 {
            let m = crate::envs::gen_random_tabular(5, 3, 100 + seed, 1.0);
            let pi = random_policy(&m, seed);
            let gamma = g(0.7);
            let law = stationary_distribution(&m).unwrap();
            let omega = exact_density_ratio(&m, &pi, gamma).unwrap();
            let w = exact_state_ratio(&m, &pi, gamma).unwrap();
            let table = m.policy_table(&pi);
            for a in 0..3 {
                for s in 0..5 {
                    let p = discounted_visitation(&m, &pi, gamma, a, s);
                    let total: f64 = p.iter().flatten().sum();
                    assert!((total - 1.0).abs() < 1e-10);
                    assert!(p.iter().flatten().all(|&x| x >= -1e-15));
                    let mut mass = 0.0;
                    for a2 in 0..3 {
                        for s2 in 0..5 {
                            let o = omega.get(a2, s2, a, s);
                            mass += o * law.pair[s2][a2];
                            let fact = table[s2][a2] / m.behavior[s2][a2] * w[s2][a][s];
                            assert!((o - fact).abs() < 1e-10);
                        }
                    }
                    assert!((mass - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn ratio_identity_holds_under_enumeration() {
        // gamma E[w pi/b f(S'+)] - E[w(S'+) f(S'+)] = -(1-gamma) E[f(S+) | a, s]
        use rand::Rng;
        for seed in 0..5 {
            let m = crate::envs::gen_random_tabular(4, 2, 200 + seed, 1.0);
            let pi = random_policy(&m, seed + 50);
            let gamma = 0.6;
            let law = stationary_distribution(&m).unwrap();
            let w = exact_state_ratio(&m, &pi, g(gamma)).unwrap();
            let table = m.policy_table(&pi);
            let mut rng = crate::rng::stream(seed, &[1]);
            let f: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for a in 0..2 {
                for s in 0..4 {
                    let mut lhs = 0.0;
                    for s1 in 0..4 {
                        for a1 in 0..2 {
                            let p_pair = law.pair[s1][a1];
                            for s2 in 0..4 {
                                let p = p_pair * m.transition[s1][a1][s2];
                                lhs += p
                                    * (gamma * w[s1][a][s] * table[s1][a1] / m.behavior[s1][a1]
                                        - w[s2][a][s])
                                    * f[s2];
                            }
                        }
                    }
                    let rhs: f64 = -(1.0 - gamma)
                        * (0..4).map(|s2| m.transition[s][a][s2] * f[s2]).sum::<f64>();
                    assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
                }
            }
        }
    }
}
