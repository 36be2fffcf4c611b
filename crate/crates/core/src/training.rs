//! Policy-gradient training loop.
//!
//! Every epoch the rollout worker samples a fresh batch of instances,
//! decodes each one stochastically inside its own graph, scores each
//! episode against the critic's baseline, and backpropagates both the
//! advantage-weighted log-probability sum (actor) and the squared
//! advantage (critic). The averaged gradients are shipped as loss packets
//! to two dedicated updater threads, one per network, each owning its
//! optimizer state and cosine schedule. The rollout worker waits for both
//! acknowledgements before the next epoch, so the threaded pipeline
//! produces bit-identical parameters to the sequential mode while the two
//! updates run concurrently.
//!
//! A priority gate drops an epoch's packets outright when the mean
//! absolute advantage is at or below the threshold: near-zero advantages
//! carry little signal, and skipping them keeps optimizer moments and the
//! schedule clock untouched.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crate::critic::critic_value;
use crate::decoder::{decode_eval, decode_training, DecodeError, DecodeMode};
use crate::instance::{generate_instances, Family, Instance, InstanceError};
use crate::model::{init_actor_params, init_critic_params, ModelConfig};
use crate::nn::checkpoint::{self, Checkpoint, CheckpointError};
use crate::nn::graph::Graph;
use crate::nn::optim::AdaBelief;
use crate::nn::schedule::CosineSchedule;
use crate::nn::tensor::{Parameters, Tensor};
use crate::par::map_batch;
use crate::rng::Rng;
use std::collections::BTreeMap;

#[derive(Debug)]
pub enum TrainError {
    Config(String),
    Instance(InstanceError),
    Decode(String),
    Checkpoint(CheckpointError),
    Io(std::io::Error),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Config(m) => write!(f, "bad training config: {m}"),
            TrainError::Instance(e) => write!(f, "instance generation failed: {e}"),
            TrainError::Decode(m) => write!(f, "rollout failed: {m}"),
            TrainError::Checkpoint(e) => write!(f, "checkpoint failed: {e}"),
            TrainError::Io(e) => write!(f, "metrics io failed: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<InstanceError> for TrainError {
    fn from(e: InstanceError) -> Self {
        TrainError::Instance(e)
    }
}

impl From<DecodeError> for TrainError {
    fn from(e: DecodeError) -> Self {
        TrainError::Decode(e.to_string())
    }
}

impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Updates applied inline on the rollout thread.
    Sync,
    /// Updates applied by dedicated per-network threads.
    Async,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub n: usize,
    pub batch: usize,
    pub epochs: u64,
    pub seed: u64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Priority gate threshold on the mean absolute advantage.
    pub gate: f64,
    pub family: Family,
    pub scale: f64,
    pub alpha: f64,
    pub validate_every: u64,
    pub validation_size: usize,
    pub mode: Mode,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            n: 10,
            batch: 64,
            epochs: 500,
            seed: 0,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            gate: 0.5,
            family: Family::CornerDepot,
            scale: 1.0,
            alpha: 2.0,
            validate_every: 200,
            validation_size: 100,
            mode: Mode::Async,
            out_dir: PathBuf::from("train_out"),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        self.model.validate().map_err(TrainError::Config)?;
        if self.batch == 0 || self.epochs == 0 || self.validation_size == 0 {
            return Err(TrainError::Config("batch, epochs, validation size must be > 0".into()));
        }
        if self.validate_every == 0 {
            return Err(TrainError::Config("validate_every must be > 0".into()));
        }
        if self.lr_actor <= 0.0 || self.lr_critic <= 0.0 {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Averaged gradients for one epoch, addressed to one updater.
pub struct LossPacket {
    pub epoch: u64,
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
}

/// Whether an epoch's packets are worth dispatching.
pub fn gate_open(mean_abs_adv: f64, threshold: f64) -> bool {
    mean_abs_adv > threshold
}

struct Ack {
    params: Arc<Parameters>,
    updates: u64,
    lr: f64,
}

enum Updater {
    Inline { params: Parameters, opt: AdaBelief, sched: CosineSchedule },
    Thread { tx: SyncSender<LossPacket>, ack_rx: Receiver<Ack>, join: JoinHandle<(Parameters, u64)> },
}

impl Updater {
    fn inline(params: Parameters, sched: CosineSchedule) -> Updater {
        Updater::Inline { params, opt: AdaBelief::new(), sched }
    }

    fn threaded(params: Parameters, sched: CosineSchedule) -> Updater {
        let (tx, rx) = sync_channel::<LossPacket>(64);
        let (ack_tx, ack_rx) = sync_channel::<Ack>(64);
        let join = std::thread::spawn(move || {
            let mut params = params;
            let mut opt = AdaBelief::new();
            while let Ok(packet) = rx.recv() {
                let lr = sched.lr(opt.updates);
                opt.step(&mut params, &packet.grads, lr);
                let ack = Ack { params: Arc::new(params.clone()), updates: opt.updates, lr };
                if ack_tx.send(ack).is_err() {
                    break;
                }
            }
            (params, opt.updates)
        });
        Updater::Thread { tx, ack_rx, join }
    }

    fn dispatch(&mut self, packet: LossPacket) -> Ack {
        match self {
            Updater::Inline { params, opt, sched } => {
                let lr = sched.lr(opt.updates);
                opt.step(params, &packet.grads, lr);
                Ack { params: Arc::new(params.clone()), updates: opt.updates, lr }
            }
            Updater::Thread { tx, ack_rx, .. } => {
                tx.send(packet).expect("updater thread alive");
                ack_rx.recv().expect("updater thread alive")
            }
        }
    }

    fn finish(self) -> (Parameters, u64) {
        match self {
            Updater::Inline { params, opt, .. } => (params, opt.updates),
            Updater::Thread { tx, ack_rx, join } => {
                drop(tx);
                drop(ack_rx);
                join.join().expect("updater thread panicked")
            }
        }
    }
}

struct EpochStats {
    mean_cost: f64,
    actor_loss: f64,
    critic_loss: f64,
    mean_abs_adv: f64,
    actor_grads: BTreeMap<String, Tensor>,
    critic_grads: BTreeMap<String, Tensor>,
}

struct EpisodeOut {
    cost: f64,
    abs_adv: f64,
    actor_loss: f64,
    critic_loss: f64,
    actor_grads: BTreeMap<String, Tensor>,
    critic_grads: BTreeMap<String, Tensor>,
}

fn accumulate(
    into: &mut BTreeMap<String, Tensor>,
    from: &BTreeMap<String, Tensor>,
    scale: f64,
) {
    for (name, g) in from {
        into.entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.rows, g.cols))
            .add_scaled(g, scale);
    }
}

/// One epoch of rollouts and gradient estimation against fixed snapshots.
/// Episodes are independent given their derived seeds, so mapping them in
/// parallel cannot change the result.
fn run_epoch(
    actor: &Parameters,
    critic: &Parameters,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<EpochStats, TrainError> {
    let gen_seed = Rng::new(cfg.seed).derive(epoch).next_u64();
    let set =
        generate_instances(cfg.n, cfg.batch, gen_seed, cfg.family, cfg.scale, cfg.alpha)?;
    let idx: Vec<usize> = (0..cfg.batch).collect();
    let outs: Vec<Result<EpisodeOut, TrainError>> = map_batch(&idx, |&i| {
        let inst = &set.instances[i];
        let mut rng = Rng::new(cfg.seed).derive(epoch).derive(i as u64);
        let mut ga = Graph::new();
        let (traj, sum_logp) =
            decode_training(&mut ga, actor, inst, &cfg.model, DecodeMode::Sample, &mut rng)?;
        let cost = traj.cost();
        let logp_val = ga.value(sum_logp).item();

        let mut gc = Graph::new();
        let v = critic_value(&mut gc, critic, inst, &cfg.model)
            .map_err(|e| TrainError::Decode(e.to_string()))?;
        let baseline = gc.value(v).item();
        let adv = cost - baseline;

        let actor_obj = ga.scale_const(sum_logp, adv);
        ga.backward(actor_obj);
        let actor_grads = ga.param_grads();

        let target = gc.input(Tensor::scalar(cost));
        let diff = gc.sub(target, v);
        let critic_obj = gc.mul(diff, diff);
        gc.backward(critic_obj);
        let critic_grads = gc.param_grads();

        Ok(EpisodeOut {
            cost,
            abs_adv: adv.abs(),
            actor_loss: adv * logp_val,
            critic_loss: adv * adv,
            actor_grads,
            critic_grads,
        })
    });

    let inv = 1.0 / cfg.batch as f64;
    let mut stats = EpochStats {
        mean_cost: 0.0,
        actor_loss: 0.0,
        critic_loss: 0.0,
        mean_abs_adv: 0.0,
        actor_grads: BTreeMap::new(),
        critic_grads: BTreeMap::new(),
    };
    for out in outs {
        let out = out?;
        stats.mean_cost += inv * out.cost;
        stats.actor_loss += inv * out.actor_loss;
        stats.critic_loss += inv * out.critic_loss;
        stats.mean_abs_adv += inv * out.abs_adv;
        accumulate(&mut stats.actor_grads, &out.actor_grads, inv);
        accumulate(&mut stats.critic_grads, &out.critic_grads, inv);
    }
    Ok(stats)
}

/// Mean greedy cost over a fixed held-out instance set.
fn validate(params: &Parameters, insts: &[Instance], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let costs: Vec<Result<f64, TrainError>> = map_batch(insts, |inst| {
        let mut rng = Rng::new(0);
        let traj = decode_eval(params, inst, &cfg.model, DecodeMode::Greedy, &mut rng)?;
        Ok(traj.cost())
    });
    let mut total = 0.0;
    for c in costs {
        total += c?;
    }
    Ok(total / insts.len() as f64)
}

pub struct TrainReport {
    pub epochs_run: u64,
    pub actor_updates: u64,
    pub critic_updates: u64,
    pub best_val_cost: f64,
    pub final_val_cost: f64,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub actor: Parameters,
    pub critic: Parameters,
}

fn save_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    actor: &Parameters,
    critic: &Parameters,
    epoch: u64,
    val_cost: f64,
) -> Result<(), TrainError> {
    let mut params = actor.clone();
    for (k, v) in critic {
        params.insert(k.clone(), v.clone());
    }
    let mut meta = BTreeMap::new();
    meta.insert("epoch".to_string(), epoch.to_string());
    meta.insert("val_cost".to_string(), format!("{val_cost}"));
    meta.insert("seed".to_string(), cfg.seed.to_string());
    meta.insert("n".to_string(), cfg.n.to_string());
    meta.insert("alpha".to_string(), format!("{}", cfg.alpha));
    let ckpt = Checkpoint { config: cfg.model.to_string(), meta, params };
    checkpoint::save(path, &ckpt)?;
    Ok(())
}

pub fn train(cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let ckpt_path = cfg.out_dir.join("best.ckpt");
    let mut metrics = std::fs::File::create(&metrics_path)?;
    {
        use std::io::Write;
        writeln!(metrics, "epoch,reward,actor_loss,critic_loss,lr_actor,lr_critic,seconds")?;
    }

    let actor_init = init_actor_params(&cfg.model, cfg.seed);
    let critic_init = init_critic_params(&cfg.model, cfg.seed.wrapping_add(7919));
    let sched_actor = CosineSchedule::new(cfg.lr_actor, cfg.epochs);
    let sched_critic = CosineSchedule::new(cfg.lr_critic, cfg.epochs);

    let mut actor_snap = Arc::new(actor_init.clone());
    let mut critic_snap = Arc::new(critic_init.clone());
    let (mut actor_up, mut critic_up) = match cfg.mode {
        Mode::Sync => (
            Updater::inline(actor_init, sched_actor.clone()),
            Updater::inline(critic_init, sched_critic.clone()),
        ),
        Mode::Async => (
            Updater::threaded(actor_init, sched_actor.clone()),
            Updater::threaded(critic_init, sched_critic.clone()),
        ),
    };

    let val_set = generate_instances(
        cfg.n,
        cfg.validation_size,
        cfg.seed + 1,
        cfg.family,
        cfg.scale,
        cfg.alpha,
    )?;

    let start = Instant::now();
    let mut actor_updates = 0u64;
    let mut critic_updates = 0u64;
    let mut best_val = f64::INFINITY;
    let mut final_val = f64::INFINITY;

    for epoch in 1..=cfg.epochs {
        let stats = run_epoch(&actor_snap, &critic_snap, cfg, epoch)?;

        let mut lr_a = sched_actor.lr(actor_updates);
        let mut lr_c = sched_critic.lr(critic_updates);
        if gate_open(stats.mean_abs_adv, cfg.gate) {
            let a_packet =
                LossPacket { epoch, loss: stats.actor_loss, grads: stats.actor_grads };
            let c_packet =
                LossPacket { epoch, loss: stats.critic_loss, grads: stats.critic_grads };
            let a_ack = actor_up.dispatch(a_packet);
            let c_ack = critic_up.dispatch(c_packet);
            actor_snap = a_ack.params;
            critic_snap = c_ack.params;
            actor_updates = a_ack.updates;
            critic_updates = c_ack.updates;
            lr_a = a_ack.lr;
            lr_c = c_ack.lr;
        }

        {
            use std::io::Write;
            writeln!(
                metrics,
                "{},{},{},{},{},{},{}",
                epoch,
                -stats.mean_cost,
                stats.actor_loss,
                stats.critic_loss,
                lr_a,
                lr_c,
                start.elapsed().as_secs_f64()
            )?;
        }

        if epoch % cfg.validate_every == 0 || epoch == cfg.epochs {
            let val = validate(&actor_snap, &val_set.instances, cfg)?;
            final_val = val;
            if val < best_val {
                best_val = val;
                save_checkpoint(&ckpt_path, cfg, &actor_snap, &critic_snap, epoch, val)?;
            }
        }
    }

    let (actor, actor_updates) = actor_up.finish();
    let (critic, critic_updates) = critic_up.finish();

    Ok(TrainReport {
        epochs_run: cfg.epochs,
        actor_updates,
        critic_updates,
        best_val_cost: best_val,
        final_val_cost: final_val,
        checkpoint: ckpt_path,
        metrics: metrics_path,
        actor,
        critic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path, mode: Mode) -> TrainConfig {
        TrainConfig {
            model: ModelConfig { d_h: 8, heads: 2, layers: 1, d_ff: 16, d_sparse: 4, l_dec: 1 },
            n: 5,
            batch: 4,
            epochs: 3,
            seed: 7,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            gate: 0.0,
            validate_every: 2,
            validation_size: 4,
            mode,
            out_dir: dir.to_path_buf(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn infinite_gate_leaves_parameters_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path(), Mode::Sync);
        cfg.gate = f64::INFINITY;
        let report = train(&cfg).unwrap();
        let actor0 = init_actor_params(&cfg.model, cfg.seed);
        let critic0 = init_critic_params(&cfg.model, cfg.seed.wrapping_add(7919));
        assert_eq!(report.actor_updates, 0);
        assert_eq!(report.critic_updates, 0);
        assert_eq!(report.actor, actor0);
        assert_eq!(report.critic, critic0);
    }

    #[test]
    fn async_and_sync_produce_identical_parameters() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let sync = train(&tiny_cfg(d1.path(), Mode::Sync)).unwrap();
        let asyn = train(&tiny_cfg(d2.path(), Mode::Async)).unwrap();
        assert!(sync.actor_updates > 0, "gate should open in this setup");
        assert_eq!(sync.actor_updates, asyn.actor_updates);
        for (name, t) in &sync.actor {
            let o = &asyn.actor[name];
            for (a, b) in t.data.iter().zip(&o.data) {
                assert!((a - b).abs() <= 1e-12, "{name} differs: {a} vs {b}");
            }
        }
        for (name, t) in &sync.critic {
            let o = &asyn.critic[name];
            for (a, b) in t.data.iter().zip(&o.data) {
                assert!((a - b).abs() <= 1e-12, "{name} differs");
            }
        }
    }

    #[test]
    fn metrics_file_has_exact_header_and_row_count() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path(), Mode::Sync);
        let report = train(&cfg).unwrap();
        let text = std::fs::read_to_string(&report.metrics).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,reward,actor_loss,critic_loss,lr_actor,lr_critic,seconds");
        assert_eq!(lines.len() as u64, cfg.epochs + 1);
        for row in &lines[1..] {
            assert_eq!(row.split(',').count(), 7);
        }
    }

    #[test]
    fn checkpoint_is_saved_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path(), Mode::Async);
        let report = train(&cfg).unwrap();
        assert!(report.checkpoint.exists());
        let ckpt = checkpoint::load(&report.checkpoint).unwrap();
        assert_eq!(ckpt.config, cfg.model.to_string());
        assert!(ckpt.params.contains_key("enc.embed.w"));
        assert!(ckpt.params.contains_key("critic.head.w2"));
        assert!(ckpt.meta.contains_key("val_cost"));
    }

    #[test]
    fn gate_threshold_is_strict() {
        assert!(!gate_open(0.4, 0.5));
        assert!(!gate_open(0.5, 0.5));
        assert!(gate_open(0.6, 0.5));
        assert!(!gate_open(10.0, f64::INFINITY));
    }
}
