//! Intention Q-network, recurrent behaviour Q-network, variational posterior
//! and ε-greedy selection.

use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::numeric::gru::GruStepCache;
use crate::numeric::{softmax, Activation, DenseCache, DenseLayer, Distribution, GruCell, Module, Param, Tensor};

/// Index into the latent intention space.
pub type IntentionId = usize;

/// Stack of dense layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug)]
pub struct MlpCache {
    caches: Vec<DenseCache>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer `output`.
    pub fn new<R: Rng>(name: &str, sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::new(&format!("{name}.l{i}"), w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(name: &str, sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::zeros(&format!("{name}.l{i}"), w[0], w[1], act)
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: Tensor) -> Result<(Tensor, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &self.layers {
            let (out, c) = l.forward_cached(h)?;
            caches.push(c);
            h = out;
        }
        Ok((h, MlpCache { caches }))
    }

    pub fn backward(&mut self, cache: &MlpCache, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for (l, c) in self.layers.iter_mut().zip(&cache.caches).rev() {
            g = l.backward(c, &g);
        }
        g
    }
}

impl Module for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// High-level Q-network over intentions from a commander observation.
#[derive(Clone, Debug)]
pub struct IntentionNet {
    pub mlp: Mlp,
}

impl IntentionNet {
    pub fn new<R: Rng>(obs_dim: usize, n_z: usize, rng: &mut R) -> Self {
        IntentionNet {
            mlp: Mlp::new("intention", &[obs_dim, 64, 64, 32, n_z], Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn zeros(obs_dim: usize, n_z: usize) -> Self {
        IntentionNet {
            mlp: Mlp::zeros("intention", &[obs_dim, 64, 64, 32, n_z], Activation::Relu, Activation::Identity),
        }
    }

    pub fn n_z(&self) -> usize {
        self.mlp.out_dim()
    }
}

impl Module for IntentionNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.mlp.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.mlp.visit_params_mut(f)
    }
}

/// Q-values of every intention for one commander observation.
pub fn intention_q(net: &IntentionNet, commander_obs: &[f64]) -> Result<Vec<f64>> {
    dim_check("intention observation", net.mlp.in_dim(), commander_obs.len())?;
    Ok(net.mlp.forward(&Tensor::from_vec(commander_obs.to_vec()))?.into_data())
}

/// Boltzmann distribution `softmax(q / T)`.
pub fn policy_distribution(qvals: &[f64], temperature: f64) -> Result<Distribution> {
    Distribution::from_logits(qvals, temperature)
}

/// ε-greedy choice among available entries; greedy ties go to the lowest index.
pub fn select_discrete<R: Rng>(qvals: &[f64], epsilon: f64, rng: &mut R, avail: Option<&[bool]>) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Parameter(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let ok = |i: usize| avail.map_or(true, |m| m[i]);
    if let Some(m) = avail {
        dim_check("availability mask", qvals.len(), m.len())?;
    }
    let choices: Vec<usize> = (0..qvals.len()).filter(|&i| ok(i)).collect();
    if choices.is_empty() {
        return Err(Error::Empty("no available choice".into()));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(choices[rng.gen_range(0..choices.len())]);
    }
    let mut best = choices[0];
    for &i in &choices[1..] {
        if qvals[i] > qvals[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Shape of the behaviour network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BehaviorLayout {
    pub obs_dim: usize,
    /// 0 disables intention conditioning.
    pub n_z: usize,
    pub id_slots: usize,
}

impl BehaviorLayout {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_z + self.id_slots
    }

    /// `obs ⊕ one-hot(z) ⊕ one-hot(agent)`.
    pub fn write_input(&self, out: &mut Vec<f64>, obs: &[f64], z: Option<IntentionId>, agent: usize) -> Result<()> {
        dim_check("behaviour observation", self.obs_dim, obs.len())?;
        if agent >= self.id_slots {
            return Err(Error::Parameter(format!(
                "agent id {agent} exceeds the {} id slots",
                self.id_slots
            )));
        }
        out.extend_from_slice(obs);
        let base = out.len();
        out.resize(base + self.n_z + self.id_slots, 0.0);
        if self.n_z > 0 {
            let z = z.ok_or_else(|| Error::Parameter("intention required".into()))?;
            if z >= self.n_z {
                return Err(Error::Parameter(format!("intention {z} out of range")));
            }
            out[base + z] = 1.0;
        }
        out[base + self.n_z + agent] = 1.0;
        Ok(())
    }
}

/// Recurrent low-level Q-network: dense → GRU → dense → head.
#[derive(Clone, Debug)]
pub struct BehaviorNet {
    pub layout: BehaviorLayout,
    pub fc1: DenseLayer,
    pub gru: GruCell,
    pub fc2: DenseLayer,
    pub head: DenseLayer,
}

/// Everything needed to backpropagate a sequence through [`BehaviorNet`].
pub struct SequenceCache {
    rows: usize,
    steps: usize,
    fc1: DenseCache,
    gru: Vec<GruStepCache>,
    fc2: DenseCache,
    head: DenseCache,
}

impl BehaviorNet {
    pub fn new<R: Rng>(layout: BehaviorLayout, hidden: usize, n_actions: usize, rng: &mut R) -> Self {
        BehaviorNet {
            layout,
            fc1: DenseLayer::new("behavior.fc1", layout.input_dim(), hidden, Activation::Relu, rng),
            gru: GruCell::new("behavior.gru", hidden, hidden, rng),
            fc2: DenseLayer::new("behavior.fc2", hidden, hidden, Activation::Relu, rng),
            head: DenseLayer::new("behavior.head", hidden, n_actions, Activation::Identity, rng),
        }
    }

    pub fn zeros(layout: BehaviorLayout, hidden: usize, n_actions: usize) -> Self {
        BehaviorNet {
            layout,
            fc1: DenseLayer::zeros("behavior.fc1", layout.input_dim(), hidden, Activation::Relu),
            gru: GruCell::zeros("behavior.gru", hidden, hidden),
            fc2: DenseLayer::zeros("behavior.fc2", hidden, hidden, Activation::Relu),
            head: DenseLayer::zeros("behavior.head", hidden, n_actions, Activation::Identity),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.head.out_dim()
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(vec![rows, self.hidden_dim()])
    }

    /// One step for `rows` agents: returns Q-values `[rows, A]` and new hidden.
    pub fn step(&self, inputs: &Tensor, hidden: &Tensor) -> Result<(Tensor, Tensor)> {
        dim_check("behaviour hidden width", self.hidden_dim(), hidden.cols())?;
        dim_check("behaviour rows", inputs.rows(), hidden.rows())?;
        let a = self.fc1.forward(inputs)?;
        let gx = self.gru.project_input(&a)?;
        let (h, _) = self.gru.step_projected(gx.data(), hidden.data());
        let h = Tensor::new_unchecked(vec![inputs.rows(), self.hidden_dim()], h);
        let q = self.head.forward(&self.fc2.forward(&h)?)?;
        q.check_finite("behaviour Q")?;
        Ok((q, h))
    }

    /// Run `steps` steps over `rows` sequences from zero hidden. `inputs` is
    /// `[steps · rows, in]`, time-major. Returns Q `[steps · rows, A]`.
    pub fn forward_sequence(&self, inputs: Tensor, rows: usize) -> Result<(Tensor, SequenceCache)> {
        let steps = inputs.rows() / rows.max(1);
        dim_check("sequence rows", steps * rows, inputs.rows())?;
        let (a, fc1) = self.fc1.forward_cached(inputs)?;
        let gx = self.gru.project_input(&a)?;
        let hd = self.hidden_dim();
        let g = 3 * hd;
        let mut h = vec![0.0; rows * hd];
        let mut hs = Vec::with_capacity(steps * rows * hd);
        let mut caches = Vec::with_capacity(steps);
        for t in 0..steps {
            let (hn, c) = self.gru.step_projected(&gx.data()[t * rows * g..(t + 1) * rows * g], &h);
            hs.extend_from_slice(&hn);
            caches.push(c);
            h = hn;
        }
        let hs = Tensor::new_unchecked(vec![steps * rows, hd], hs);
        let (f2, fc2) = self.fc2.forward_cached(hs)?;
        let (q, head) = self.head.forward_cached(f2)?;
        q.check_finite("behaviour Q sequence")?;
        Ok((
            q,
            SequenceCache {
                rows,
                steps,
                fc1,
                gru: caches,
                fc2,
                head,
            },
        ))
    }

    /// Forward pass without keeping activations, for target networks.
    pub fn forward_sequence_eval(&self, inputs: &Tensor, rows: usize) -> Result<Tensor> {
        let steps = inputs.rows() / rows.max(1);
        let a = self.fc1.forward(inputs)?;
        let gx = self.gru.project_input(&a)?;
        let hd = self.hidden_dim();
        let g = 3 * hd;
        let mut h = vec![0.0; rows * hd];
        let mut hs = Vec::with_capacity(steps * rows * hd);
        for t in 0..steps {
            let (hn, _) = self.gru.step_projected(&gx.data()[t * rows * g..(t + 1) * rows * g], &h);
            hs.extend_from_slice(&hn);
            h = hn;
        }
        let hs = Tensor::new_unchecked(vec![steps * rows, hd], hs);
        self.head.forward(&self.fc2.forward(&hs)?)
    }

    /// Backpropagation through time; `dq` has the shape of the forward output.
    pub fn backward_sequence(&mut self, cache: &SequenceCache, dq: &Tensor) {
        let d2 = self.head.backward(&cache.head, dq);
        let dh_all = self.fc2.backward(&cache.fc2, &d2);
        let hd = self.hidden_dim();
        let g = 3 * hd;
        let rows = cache.rows;
        let mut dgx = vec![0.0; cache.steps * rows * g];
        let mut carry = vec![0.0; rows * hd];
        for t in (0..cache.steps).rev() {
            for (c, d) in carry.iter_mut().zip(&dh_all.data()[t * rows * hd..(t + 1) * rows * hd]) {
                *c += d;
            }
            let (dg, dprev) = self.gru.backward_step(&cache.gru[t], &carry);
            dgx[t * rows * g..(t + 1) * rows * g].copy_from_slice(&dg);
            carry = dprev;
        }
        let da = self.gru.backward_input(cache.fc1.output(), &dgx);
        self.fc1.backward(&cache.fc1, &da);
    }
}

impl Module for BehaviorNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.fc1.visit_params(f);
        self.gru.visit_params(f);
        self.fc2.visit_params(f);
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params_mut(f);
        self.gru.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
        self.head.visit_params_mut(f);
    }
}

/// Q-values for one agent given its observation, intention and hidden state.
pub fn behavior_q(
    net: &BehaviorNet,
    obs: &[f64],
    z: Option<IntentionId>,
    agent: usize,
    hidden: &Tensor,
) -> Result<(Vec<f64>, Tensor)> {
    let mut x = Vec::with_capacity(net.layout.input_dim());
    net.layout.write_input(&mut x, obs, z, agent)?;
    let (q, h) = net.step(&Tensor::matrix(1, x.len(), x), hidden)?;
    Ok((q.into_data(), h))
}

/// Variational posterior `q(z | o, o')` as logits over intentions.
#[derive(Clone, Debug)]
pub struct PosteriorNet {
    pub mlp: Mlp,
}

impl PosteriorNet {
    pub fn new<R: Rng>(obs_dim: usize, n_z: usize, rng: &mut R) -> Self {
        PosteriorNet {
            mlp: Mlp::new("posterior", &[2 * obs_dim, 64, n_z], Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn zeros(obs_dim: usize, n_z: usize) -> Self {
        PosteriorNet {
            mlp: Mlp::zeros("posterior", &[2 * obs_dim, 64, n_z], Activation::Relu, Activation::Identity),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.mlp.in_dim() / 2
    }
}

impl Module for PosteriorNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.mlp.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.mlp.visit_params_mut(f)
    }
}

pub fn posterior(net: &PosteriorNet, o_t: &[f64], o_t1: &[f64]) -> Result<Distribution> {
    dim_check("posterior o_t", net.obs_dim(), o_t.len())?;
    dim_check("posterior o_t1", net.obs_dim(), o_t1.len())?;
    let mut x = o_t.to_vec();
    x.extend_from_slice(o_t1);
    let logits = net.mlp.forward(&Tensor::from_vec(x))?;
    Distribution::new(softmax(logits.data(), 1.0)?)
}
