//! Subcommand implementations, callable without the binary.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::Utc;
use naht_core::eval::{
    crossplay_matrix, ed_diag_csv, mn_score, ood_eval, varying_n_csv, varying_n_curve, within_episode_ed_diag,
    EvalOptions, Pairing,
};
use naht_core::poam::checkpoint::read_meta;
use naht_core::poam::{load_checkpoint, train_selfplay_teammates, IterationMetrics, Learner};
use naht_core::registry::{Registry, RegistryEntry, HOLDOUT_TAG, TRAIN_TAG};
use naht_core::{PolicyHandle, PolicyKind};
use naht_nn::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Precision, RunConfig};

/// Write `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutputs {
    pub seed: u64,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub started: String,
    pub finished: String,
    pub code_version: String,
    pub seeds: Vec<SeedOutputs>,
}

pub fn seed_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("seed{seed}"))
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("iter{iteration:06}.naht"))
}

fn uncontrolled(cfg: &RunConfig) -> Result<Vec<PolicyHandle>> {
    let reg = cfg.registry()?;
    Ok(reg.handles(&cfg.env, Some(&cfg.teammate_tag))?)
}

fn train_seed<T: Real>(
    cfg: &RunConfig,
    seed: u64,
    teammates: &[PolicyHandle],
    log: &mut dyn FnMut(u64, &IterationMetrics),
) -> Result<SeedOutputs> {
    let dir = seed_dir(cfg, seed);
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    let id = format!("{}_seed{seed}", serde_json::to_value(cfg.variant)?.as_str().unwrap_or("policy"));
    let mut learner = Learner::<T>::new(
        id,
        cfg.env.clone(),
        cfg.width,
        cfg.embed_dim,
        cfg.hyper.clone(),
        cfg.variant.variant(),
        seed,
    )?;
    learner.workers = cfg.workers;
    learner.dump_dir = Some(dir.clone());
    let metrics_path = dir.join("metrics.csv");
    let mut metrics = File::create(&metrics_path)?;
    writeln!(metrics, "{}", IterationMetrics::CSV_HEADER)?;
    let mut checkpoints = vec![checkpoint_path(&dir, 0)];
    learner.save(&checkpoints[0])?;
    while learner.env_steps < cfg.total_env_steps {
        let m = learner.train_iteration(teammates)?;
        writeln!(metrics, "{}", m.csv_row())?;
        log(seed, &m);
        if cfg.checkpoint_every > 0 && m.iteration % cfg.checkpoint_every == 0 {
            let p = checkpoint_path(&dir, m.iteration);
            learner.save(&p)?;
            checkpoints.push(p);
        }
    }
    metrics.flush()?;
    let final_checkpoint = dir.join("final.naht");
    learner.save(&final_checkpoint)?;
    Ok(SeedOutputs {
        seed,
        metrics: metrics_path,
        checkpoints,
        final_checkpoint,
    })
}

/// Train every seed of `cfg`, writing metrics, checkpoints, the config echo
/// and finally the manifest.
pub fn train(cfg: &RunConfig, log: &mut dyn FnMut(u64, &IterationMetrics)) -> Result<RunManifest> {
    let started = Utc::now().to_rfc3339();
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let echo = cfg.to_pretty_json();
    write_atomic(&cfg.out_dir.join("config.json"), echo.as_bytes())?;
    let teammates = uncontrolled(cfg)?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let out = match cfg.precision {
            Precision::F32 => train_seed::<f32>(cfg, seed, &teammates, log),
            Precision::F64 => train_seed::<f64>(cfg, seed, &teammates, log),
        }
        .with_context(|| format!("seed {seed}"))?;
        seeds.push(out);
    }
    let manifest = RunManifest {
        config_sha256: sha256_hex(echo.as_bytes()),
        started,
        finished: Utc::now().to_rfc3339(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
    };
    write_atomic(
        &cfg.out_dir.join("manifest.json"),
        (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Mn,
    Xp,
    Ood,
    Varyn,
    Eddiag,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mn" => EvalMode::Mn,
            "xp" => EvalMode::Xp,
            "ood" => EvalMode::Ood,
            "varyn" => EvalMode::Varyn,
            "eddiag" => EvalMode::Eddiag,
            other => bail!("unknown eval mode {other}; expected mn, xp, ood, varyn or eddiag"),
        })
    }

    pub fn file_name(self) -> &'static str {
        match self {
            EvalMode::Mn => "mn_score.csv",
            EvalMode::Xp => "xp_matrix.csv",
            EvalMode::Ood => "ood.csv",
            EvalMode::Varyn => "varying_n.csv",
            EvalMode::Eddiag => "ed_diag.csv",
        }
    }
}

/// Refuse checkpoints trained for a different environment.
fn check_env(cfg: &RunConfig, path: &Path) -> Result<()> {
    let meta = read_meta(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    let want = cfg.env.spec().fingerprint();
    if meta.env_fingerprint != want {
        bail!(
            "checkpoint {} was trained on {} but the config describes {want}",
            path.display(),
            meta.env_fingerprint
        );
    }
    Ok(())
}

fn checkpoint_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(parent) if parent != "checkpoints" => format!("{}/{stem}", parent.to_string_lossy()),
        _ => stem,
    }
}

fn controlled_handle(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<PolicyHandle> {
    let [path] = checkpoints else {
        bail!("this mode needs exactly one --checkpoint");
    };
    check_env(cfg, path)?;
    let (meta, policy) = load_checkpoint(path)?;
    Ok(policy.into_handle(meta.id).with_seed(meta.seed))
}

/// Run one evaluation protocol and write its CSV into `out_dir`.
pub fn eval(cfg: &RunConfig, mode: EvalMode, checkpoints: &[PathBuf], episodes: Option<usize>) -> Result<PathBuf> {
    let mut opts = EvalOptions::new(episodes.unwrap_or(cfg.eval_episodes), cfg.seeds[0]);
    opts.workers = cfg.workers;
    if opts.episodes == 0 {
        bail!("--episodes must be positive");
    }
    let reg = cfg.registry()?;
    let csv = match mode {
        EvalMode::Mn => {
            let me = controlled_handle(cfg, checkpoints)?;
            mn_score(&me, &reg.handles(&cfg.env, Some(&cfg.teammate_tag))?, &cfg.env, &opts)?.to_csv()
        }
        EvalMode::Varyn => {
            let me = controlled_handle(cfg, checkpoints)?;
            varying_n_csv(&varying_n_curve(&me, &reg.handles(&cfg.env, Some(&cfg.teammate_tag))?, &cfg.env, &opts)?)
        }
        EvalMode::Ood => {
            let me = controlled_handle(cfg, checkpoints)?;
            let train = reg.handles(&cfg.env, Some(TRAIN_TAG))?;
            let holdout = reg.handles(&cfg.env, Some(HOLDOUT_TAG))?;
            ood_eval(&me, &train, &holdout, &cfg.env, &opts, false)?.to_csv()
        }
        EvalMode::Xp => {
            let mut teams = reg.handles(&cfg.env, None)?;
            for path in checkpoints {
                check_env(cfg, path)?;
                let (_, policy) = load_checkpoint(path)?;
                teams.push(policy.into_handle(checkpoint_label(path)));
            }
            crossplay_matrix(&teams, &cfg.env, &opts, Pairing::All)?.to_csv()
        }
        EvalMode::Eddiag => {
            if checkpoints.is_empty() {
                bail!("eddiag needs at least one --checkpoint");
            }
            let mut cps = Vec::new();
            for path in checkpoints {
                check_env(cfg, path)?;
                cps.push((checkpoint_label(path), load_checkpoint(path)?.1));
            }
            let teammates = reg.handles(&cfg.env, Some(&cfg.teammate_tag))?;
            ed_diag_csv(&within_episode_ed_diag(&cfg.env, &cps, &teammates, &opts)?)
        }
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join(mode.file_name());
    write_atomic(&path, csv.as_bytes())?;
    Ok(path)
}

/// Outcome of `registry build`.
#[derive(Debug)]
pub struct BuildReport {
    pub registry: PathBuf,
    pub failed: Vec<(u64, String)>,
}

/// Train self-play IPPO teams for the training and held-out seeds and write
/// `registry.json` next to them, keeping the config's existing entries.
pub fn registry_build(cfg: &RunConfig) -> Result<BuildReport> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut entries = cfg.registry()?.entries;
    let fingerprint = cfg.env.spec().fingerprint();
    let mut failed = Vec::new();
    for (tag, seeds) in [(TRAIN_TAG, &cfg.seeds), (HOLDOUT_TAG, &cfg.holdout_seeds)] {
        let runs = train_selfplay_teammates(&cfg.env, &cfg.hyper, cfg.width, cfg.total_env_steps, seeds, &cfg.out_dir)?;
        for run in runs {
            match run.handle {
                Ok(h) => entries.push(RegistryEntry {
                    id: h.id,
                    kind: PolicyKind::Network,
                    seed: Some(run.seed),
                    env: fingerprint.clone(),
                    checkpoint_path: Some(PathBuf::from(format!("selfplay_seed{}.naht", run.seed))),
                    tags: vec![tag.to_string()],
                    params: None,
                }),
                Err(e) => failed.push((run.seed, e.to_string())),
            }
        }
    }
    let reg = Registry::new(entries, &cfg.out_dir)?;
    let path = cfg.out_dir.join("registry.json");
    reg.save(&path)?;
    Ok(BuildReport { registry: path, failed })
}

/// One line per registry entry.
pub fn registry_list(reg: &Registry) -> String {
    let mut out = String::from("id,kind,seed,env,tags,checkpoint\n");
    for e in &reg.entries {
        let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        out.push_str(&format!(
            "{},{kind},{},{},{},{}\n",
            e.id,
            e.seed.map(|s| s.to_string()).unwrap_or_default(),
            e.env,
            e.tags.join("|"),
            e.checkpoint_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        ));
    }
    out
}
