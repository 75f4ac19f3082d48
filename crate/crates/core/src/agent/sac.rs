//! Design-conditioned soft actor-critic.
//!
//! The policy sees `[state, design]` and the critics see
//! `[state, action, design]`, where the design is affinely normalized to
//! `[-1, 1]` using the design-space bounds.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, ScalarAdam};
use super::mlp::{Mlp, MlpGrads};
use super::squash::{component_log_prob, LOG_STD_MAX, LOG_STD_MIN};
use crate::domain::{Action, DesignSpace, DesignTransition, DesignVector, RngStream, State};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    /// Hidden layer widths shared by actor and critics.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub tau: f64,
    pub twin_critics: bool,
    pub auto_entropy: bool,
    pub initial_alpha: f64,
    /// Defaults to `-action_dim` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_entropy: Option<f64>,
    pub batch_size: usize,
    pub updates_individual: usize,
    pub updates_population: usize,
    pub population_fraction: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![200, 200, 200],
            learning_rate: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            twin_critics: true,
            auto_entropy: true,
            initial_alpha: 1.0,
            target_entropy: None,
            batch_size: 256,
            updates_individual: 1000,
            updates_population: 250,
            population_fraction: 0.1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self, errors: &mut Vec<String>) {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errors.push("sac.hidden: need at least one layer, all widths > 0".into());
        }
        if !(self.learning_rate > 0.0) {
            errors.push("sac.learning_rate: must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errors.push("sac.gamma: must lie in [0, 1]".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errors.push("sac.tau: must lie in (0, 1]".into());
        }
        if !(self.initial_alpha > 0.0) {
            errors.push("sac.initial_alpha: must be > 0".into());
        }
        if self.batch_size == 0 {
            errors.push("sac.batch_size: must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.population_fraction) {
            errors.push("sac.population_fraction: must lie in [0, 1]".into());
        }
    }
}

/// Column-stacked training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
    /// Normalized designs.
    pub designs: Array2<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[DesignTransition], space: &DesignSpace) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptySource("training batch"))?;
        let (n, ds, da, dd) = (
            items.len(),
            first.transition.s.0.len(),
            first.transition.a.0.len(),
            space.dim(),
        );
        let mut b = Batch {
            states: Array2::zeros((n, ds)),
            actions: Array2::zeros((n, da)),
            rewards: Array1::zeros(n),
            next_states: Array2::zeros((n, ds)),
            dones: Array1::zeros(n),
            designs: Array2::zeros((n, dd)),
        };
        for (i, item) in items.iter().enumerate() {
            let t = &item.transition;
            check_dim(ds, t.s.0.len())?;
            check_dim(ds, t.s_next.0.len())?;
            check_dim(da, t.a.0.len())?;
            check_dim(dd, item.design.len())?;
            b.states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s.0[..]));
            b.next_states.row_mut(i).assign(&ndarray::ArrayView1::from(&t.s_next.0[..]));
            b.actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.a.0[..]));
            b.rewards[i] = t.r;
            b.dones[i] = if t.done { 1.0 } else { 0.0 };
            let mut row = vec![0.0; dd];
            space.normalize_into(item.design.values(), &mut row);
            b.designs.row_mut(i).assign(&Array1::from(row));
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub critic: f64,
    pub policy: f64,
    pub temperature: f64,
}

/// Actor, critics, their targets, the temperature and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSet {
    pub cfg: SacConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub design_space: DesignSpace,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
    pub policy_opt: Adam,
    pub q1_opt: Adam,
    pub q2_opt: Adam,
    pub alpha_opt: ScalarAdam,
    /// Completed calls to [`NetworkSet::update`].
    pub updates: u64,
}

impl NetworkSet {
    pub fn new(
        cfg: SacConfig,
        state_dim: usize,
        action_dim: usize,
        design_space: DesignSpace,
        rng: &mut RngStream,
    ) -> Self {
        let dd = design_space.dim();
        let sizes = |inp: usize, out: usize| {
            let mut v = vec![inp];
            v.extend(&cfg.hidden);
            v.push(out);
            v
        };
        let policy = Mlp::new(&sizes(state_dim + dd, 2 * action_dim), rng);
        let q1 = Mlp::new(&sizes(state_dim + action_dim + dd, 1), rng);
        let q2 = Mlp::new(&sizes(state_dim + action_dim + dd, 1), rng);
        let lr = cfg.learning_rate;
        Self {
            policy_opt: Adam::new(&policy, lr),
            q1_opt: Adam::new(&q1, lr),
            q2_opt: Adam::new(&q2, lr),
            alpha_opt: ScalarAdam::new(lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            log_alpha: cfg.initial_alpha.ln(),
            policy,
            q1,
            q2,
            state_dim,
            action_dim,
            design_space,
            updates: 0,
            cfg,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    fn normalized_design(&self, design: &DesignVector) -> Result<Vec<f64>> {
        check_dim(self.design_space.dim(), design.len())?;
        let mut out = vec![0.0; design.len()];
        self.design_space.normalize_into(design.values(), &mut out);
        Ok(out)
    }

    /// Splits policy output into mean and clamped log-std. The mask marks
    /// log-std entries that were inside the clamp range.
    fn split_policy_output(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
        let a = self.action_dim;
        let mean = out.slice(s![.., ..a]).to_owned();
        let raw = out.slice(s![.., a..]);
        let mask = raw.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std, mask)
    }

    /// Samples squashed actions and their log-probabilities for a batch of
    /// policy inputs.
    fn sample_actions(&self, policy_in: &Array2<f64>, rng: &mut RngStream) -> (Array2<f64>, Array1<f64>) {
        let out = self.policy.forward(policy_in);
        let (mean, log_std, _) = self.split_policy_output(&out);
        let eps = noise(mean.dim(), rng);
        squash_sample(&mean, &log_std, &eps)
    }

    /// Single-state action. Deterministic mode returns `tanh(mean)`.
    pub fn act(
        &self,
        s: &State,
        design: &DesignVector,
        stochastic: bool,
        rng: &mut RngStream,
    ) -> Result<Action> {
        check_dim(self.state_dim, s.0.len())?;
        let nd = self.normalized_design(design)?;
        let mut input = Array2::zeros((1, self.state_dim + nd.len()));
        for (j, v) in s.0.iter().chain(&nd).enumerate() {
            input[[0, j]] = *v;
        }
        let out = self.policy.forward(&input);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "policy output non-finite for state {:?}, design {:?} after {} updates",
                s.0, design.0, self.updates
            )));
        }
        let (mean, log_std, _) = self.split_policy_output(&out);
        let values = if stochastic {
            let eps = noise(mean.dim(), rng);
            squash_sample(&mean, &log_std, &eps).0.row(0).to_vec()
        } else {
            mean.row(0).iter().map(|m| m.tanh()).collect()
        };
        Ok(Action(values))
    }

    /// Deterministic actions for a batch of states under one design.
    pub fn act_batch_deterministic(&self, states: &Array2<f64>, design: &DesignVector) -> Result<Array2<f64>> {
        let nd = self.normalized_design(design)?;
        let input = concat_design(states, &nd);
        let out = self.policy.forward(&input);
        Ok(out.slice(s![.., ..self.action_dim]).mapv(f64::tanh))
    }

    fn critic_input(states: &Array2<f64>, actions: &Array2<f64>, designs: &Array2<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[states.view(), actions.view(), designs.view()])
            .expect("row counts agree")
    }

    fn min_q(&self, q1: &Array2<f64>, q2: &Array2<f64>) -> Array1<f64> {
        if self.cfg.twin_critics {
            ndarray::Zip::from(q1.column(0))
                .and(q2.column(0))
                .map_collect(|&a, &b| a.min(b))
        } else {
            q1.column(0).to_owned()
        }
    }

    /// `min(q1, q2)` at one `(s, a, design)` (or `q1` with a single critic).
    pub fn q_value(&self, s: &State, a: &Action, design: &DesignVector) -> Result<f64> {
        check_dim(self.state_dim, s.0.len())?;
        check_dim(self.action_dim, a.0.len())?;
        let nd = self.normalized_design(design)?;
        let states = Array2::from_shape_vec((1, self.state_dim), s.0.clone()).expect("shape");
        let actions = Array2::from_shape_vec((1, self.action_dim), a.0.clone()).expect("shape");
        let designs = Array2::from_shape_vec((1, nd.len()), nd).expect("shape");
        Ok(self.q_values_batch(&states, &actions, &designs)[0])
    }

    /// Pointwise `min(q1, q2)` over a batch; designs already normalized.
    pub fn q_values_batch(&self, states: &Array2<f64>, actions: &Array2<f64>, designs: &Array2<f64>) -> Array1<f64> {
        let input = Self::critic_input(states, actions, designs);
        let q1 = self.q1.forward(&input);
        if self.cfg.twin_critics {
            let q2 = self.q2.forward(&input);
            self.min_q(&q1, &q2)
        } else {
            q1.column(0).to_owned()
        }
    }

    /// Mean over states of `Q(s, tanh(mean(s, design)), design)`.
    pub fn mean_q_deterministic(&self, states: &Array2<f64>, design: &DesignVector) -> Result<f64> {
        if states.nrows() == 0 {
            return Err(Error::EmptySource("start-state batch"));
        }
        let nd = self.normalized_design(design)?;
        let actions = self.act_batch_deterministic(states, design)?;
        let designs = Array2::from_shape_fn((states.nrows(), nd.len()), |(_, j)| nd[j]);
        let q = self.q_values_batch(states, &actions, &designs);
        Ok(q.mean().expect("non-empty"))
    }

    /// Soft Bellman targets `r + gamma (1 - done) (min Q'(s', a') - alpha log pi(a'|s'))`
    /// with `a'` sampled from the current policy.
    pub fn bellman_targets(&self, batch: &Batch, rng: &mut RngStream) -> Array1<f64> {
        let next_in = ndarray::concatenate(Axis(1), &[batch.next_states.view(), batch.designs.view()])
            .expect("row counts agree");
        let (next_a, next_logp) = self.sample_actions(&next_in, rng);
        let tin = Self::critic_input(&batch.next_states, &next_a, &batch.designs);
        let t1 = self.q1_target.forward(&tin);
        let t_min = if self.cfg.twin_critics {
            let t2 = self.q2_target.forward(&tin);
            self.min_q(&t1, &t2)
        } else {
            t1.column(0).to_owned()
        };
        let alpha = self.alpha();
        let gamma = self.cfg.gamma;
        ndarray::Zip::from(&batch.rewards)
            .and(&batch.dones)
            .and(&t_min)
            .and(&next_logp)
            .map_collect(|&r, &d, &q, &lp| {
                let soft = if alpha == 0.0 { q } else { q - alpha * lp };
                r + gamma * (1.0 - d) * soft
            })
    }

    /// One gradient step on critics, policy and temperature, then a soft
    /// target update.
    pub fn update(&mut self, batch: &Batch, rng: &mut RngStream) -> Result<Losses> {
        if batch.is_empty() {
            return Err(Error::EmptySource("training batch"));
        }
        let targets = self.bellman_targets(batch, rng);
        let cin = Self::critic_input(&batch.states, &batch.actions, &batch.designs);

        let (l1, g1) = critic_loss_and_grads(&self.q1, &cin, &targets);
        let mut critic_loss = l1;
        self.q1_opt.apply(&mut self.q1, &g1);
        if self.cfg.twin_critics {
            let (l2, g2) = critic_loss_and_grads(&self.q2, &cin, &targets);
            critic_loss += l2;
            self.q2_opt.apply(&mut self.q2, &g2);
        }

        let pin = ndarray::concatenate(Axis(1), &[batch.states.view(), batch.designs.view()])
            .expect("row counts agree");
        let eps = noise((batch.len(), self.action_dim), rng);
        let twin = self.cfg.twin_critics;
        let alpha = self.alpha();
        let pol = policy_loss_and_grads(
            &self.policy,
            &self.q1,
            twin.then_some(&self.q2),
            &pin,
            &batch.states,
            &batch.designs,
            &eps,
            alpha,
        );
        self.policy_opt.apply(&mut self.policy, &pol.grads);

        let mut temp_loss = 0.0;
        if self.cfg.auto_entropy {
            let h = self.target_entropy();
            let mean_term = pol.log_probs.iter().map(|lp| lp + h).sum::<f64>() / batch.len() as f64;
            temp_loss = -self.log_alpha * mean_term;
            let mut la = self.log_alpha;
            self.alpha_opt.apply(&mut la, -mean_term);
            self.log_alpha = la;
        }

        let tau = self.cfg.tau;
        self.q1_target.soft_update_from(&self.q1, tau);
        if twin {
            self.q2_target.soft_update_from(&self.q2, tau);
        }
        self.updates += 1;

        let losses = Losses {
            critic: critic_loss,
            policy: pol.loss,
            temperature: temp_loss,
        };
        if !(losses.critic.is_finite() && losses.policy.is_finite() && losses.temperature.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss at update {}: critic {}, policy {}, temperature {} (alpha {})",
                self.updates, losses.critic, losses.policy, losses.temperature, alpha
            )));
        }
        Ok(losses)
    }
}

fn noise(dim: (usize, usize), rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal))
}

fn concat_design(states: &Array2<f64>, nd: &[f64]) -> Array2<f64> {
    let (n, ds) = states.dim();
    let mut out = Array2::zeros((n, ds + nd.len()));
    out.slice_mut(s![.., ..ds]).assign(states);
    for mut row in out.rows_mut() {
        for (j, v) in nd.iter().enumerate() {
            row[ds + j] = *v;
        }
    }
    out
}

/// Reparameterized squashed sample; returns actions and summed log-probs.
pub fn squash_sample(mean: &Array2<f64>, log_std: &Array2<f64>, eps: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (n, da) = mean.dim();
    let mut actions = Array2::zeros((n, da));
    let mut logp = Array1::zeros(n);
    for i in 0..n {
        for j in 0..da {
            let u = mean[[i, j]] + log_std[[i, j]].exp() * eps[[i, j]];
            actions[[i, j]] = u.tanh();
            logp[i] += component_log_prob(eps[[i, j]], log_std[[i, j]], u);
        }
    }
    (actions, logp)
}

/// Mean squared Bellman residual of one critic and its parameter gradients.
pub fn critic_loss_and_grads(critic: &Mlp, input: &Array2<f64>, targets: &Array1<f64>) -> (f64, MlpGrads) {
    let n = input.nrows() as f64;
    let (q, cache) = critic.forward_cached(input.clone());
    let resid = &q.column(0) - targets;
    let loss = resid.mapv(|r| r * r).sum() / n;
    let d_out = (resid * (2.0 / n)).insert_axis(Axis(1));
    let mut grads = MlpGrads::zeros_like(critic);
    critic.backward(&cache, &d_out, Some(&mut grads));
    (loss, grads)
}

pub struct PolicyStep {
    pub loss: f64,
    pub grads: MlpGrads,
    pub log_probs: Array1<f64>,
}

/// Entropy-regularized actor loss `mean(alpha log pi(a|s) - min Q(s, a))`
/// with `a = tanh(mean + std * eps)`, and its gradient w.r.t. the policy
/// parameters (critics are held fixed).
#[allow(clippy::too_many_arguments)]
pub fn policy_loss_and_grads(
    policy: &Mlp,
    q1: &Mlp,
    q2: Option<&Mlp>,
    policy_in: &Array2<f64>,
    states: &Array2<f64>,
    designs: &Array2<f64>,
    eps: &Array2<f64>,
    alpha: f64,
) -> PolicyStep {
    let (n, da) = eps.dim();
    let nf = n as f64;
    let (out, pcache) = policy.forward_cached(policy_in.clone());
    let mean = out.slice(s![.., ..da]).to_owned();
    let raw = out.slice(s![.., da..]);
    let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let (actions, log_probs) = squash_sample(&mean, &log_std, eps);

    let cin = NetworkSet::critic_input(states, &actions, designs);
    let (v1, c1) = q1.forward_cached(cin.clone());
    let ds = states.ncols();
    // d(-Q)/d(input), routed through whichever critic is the minimum
    let (q_min, d_action) = match q2 {
        Some(q2) => {
            let (v2, c2) = q2.forward_cached(cin);
            let pick1 = ndarray::Zip::from(v1.column(0))
                .and(v2.column(0))
                .map_collect(|&a, &b| a <= b);
            let w1 = pick1.mapv(|p| if p { -1.0 / nf } else { 0.0 }).insert_axis(Axis(1));
            let w2 = pick1.mapv(|p| if p { 0.0 } else { -1.0 / nf }).insert_axis(Axis(1));
            let g = q1.backward(&c1, &w1, None) + q2.backward(&c2, &w2, None);
            let q_min = ndarray::Zip::from(v1.column(0))
                .and(v2.column(0))
                .map_collect(|&a, &b| a.min(b));
            (q_min, g.slice(s![.., ds..ds + da]).to_owned())
        }
        None => {
            let w = Array2::from_elem((n, 1), -1.0 / nf);
            let g = q1.backward(&c1, &w, None);
            (v1.column(0).to_owned(), g.slice(s![.., ds..ds + da]).to_owned())
        }
    };

    let loss = (alpha * &log_probs - &q_min).sum() / nf;

    let mut d_out = Array2::zeros(out.raw_dim());
    for i in 0..n {
        for j in 0..da {
            let a = actions[[i, j]];
            let std = log_std[[i, j]].exp();
            let e = eps[[i, j]];
            // dL/du: critic path through tanh plus the squash-correction term
            let du = d_action[[i, j]] * (1.0 - a * a) + alpha * 2.0 * a / nf;
            d_out[[i, j]] = du;
            let in_range = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw[[i, j]]);
            d_out[[i, da + j]] = if in_range { du * std * e - alpha / nf } else { 0.0 };
        }
    }
    let mut grads = MlpGrads::zeros_like(policy);
    policy.backward(&pcache, &d_out, Some(&mut grads));
    PolicyStep {
        loss,
        grads,
        log_probs,
    }
}
