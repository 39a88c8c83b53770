use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use bgrpo::features::{load_feature_file, load_teacher_predictions, split_half, write_feature_file};
use bgrpo::loss::{grad_check, GradCheckSpec, LossKind};
use bgrpo::policy::{init_params, looks_like_checkpoint};
use bgrpo::report::{EpochRecord, ReportWriter, Stage};
use bgrpo::synthetic::{generate, second_view, MixtureSpec};
use bgrpo::trainer::{
    cross_entropy, evaluate, make_teacher_from_checkpoint, train_bgrpo_with, train_supervised_with, EpochObserver,
};
use bgrpo::{Dataset, Error, PolicyParams, Result, TeacherSource};

use crate::config::RunConfig;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn require(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| Error::Config(format!("no {what} file given")))?;
    if !path.is_file() {
        return Err(Error::Io {
            path: path.clone(),
            source: io::Error::new(io::ErrorKind::NotFound, format!("{what} file not found")),
        });
    }
    Ok(path.clone())
}

/// Creates `explicit`, or the first free `<root>/<command>-NNN`.
pub fn create_run_dir(root: &Path, command: &str, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(dir) = explicit {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        return Ok(dir.to_path_buf());
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    for index in 1.. {
        let dir = root.join(format!("{command}-{index:03}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!("run index space exhausted")
}

/// Streams records to `report.csv` and writes periodic checkpoints.
struct RunRecorder {
    writer: ReportWriter<fs::File>,
    checkpoint_dir: PathBuf,
    every: usize,
    prefix: &'static str,
}

impl RunRecorder {
    fn new(run_dir: &Path, every: usize, prefix: &'static str) -> Result<Self> {
        let checkpoint_dir = run_dir.join("checkpoints");
        if every > 0 {
            fs::create_dir_all(&checkpoint_dir).map_err(io_err(&checkpoint_dir))?;
        }
        Ok(Self {
            writer: ReportWriter::create(run_dir.join("report.csv"))?,
            checkpoint_dir,
            every,
            prefix,
        })
    }
}

impl EpochObserver for RunRecorder {
    fn on_epoch(&mut self, record: &EpochRecord, params: &PolicyParams) -> Result<()> {
        self.writer.write(record)?;
        println!(
            "{} epoch {:>4}  loss {:>9.5}  macro_f1 {:.4}",
            record.stage, record.epoch, record.loss, record.macro_f1
        );
        if self.every > 0 && record.epoch.is_multiple_of(self.every) {
            params.save(self.checkpoint_dir.join(format!("{}_epoch{:04}.ckpt", self.prefix, record.epoch)))?;
        }
        Ok(())
    }
}

pub struct GenArgs {
    pub spec: MixtureSpec,
    pub out: PathBuf,
    pub second_view: bool,
    pub view_seed: u64,
    pub view_noise: f64,
}

fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn gen(args: &GenArgs) -> Result<()> {
    let data = generate(&args.spec)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_feature_file(&data, &args.out)?;
    let spec_path = sibling(&args.out, "", "spec.toml");
    let mut spec_text = args.spec.describe();
    if args.second_view {
        spec_text.push_str(&format!("view_seed = {}\nview_noise = {}\n", args.view_seed, args.view_noise));
    }
    write_text(&spec_path, &spec_text)?;
    println!("wrote {} samples to {}", data.len(), args.out.display());
    if args.second_view {
        let view = second_view(&data, args.view_seed, args.view_noise)?;
        let view_path = sibling(&args.out, "_view2", "feat");
        write_feature_file(&view, &view_path)?;
        println!("wrote second view to {}", view_path.display());
    }
    Ok(())
}

pub struct TrainBaselineArgs {
    pub config: RunConfig,
    pub output_root: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

pub fn train_baseline(args: &TrainBaselineArgs) -> Result<PathBuf> {
    let rc = &args.config;
    let train_path = require(rc.paths.train.as_ref(), "training")?;
    let eval_path = require(rc.paths.eval.as_ref(), "evaluation")?;
    let cfg = rc.bgrpo()?;
    let pool = load_feature_file(&train_path)?;
    let eval = load_feature_file(&eval_path)?;

    let root = rc.output_root(args.output_root.as_deref());
    let run_dir = create_run_dir(&root, "baseline", args.run_dir.as_deref())?;
    write_text(&run_dir.join("config.toml"), &rc.resolved(&root)?.to_toml())?;

    let train: Dataset = if let Some(fraction) = rc.data.split_fraction {
        let (labeled, rest) = split_half(&pool, fraction, cfg.seed)?;
        write_feature_file(&labeled, run_dir.join("warmup_half.feat"))?;
        write_feature_file(&rest, run_dir.join("rl_half.feat"))?;
        labeled
    } else {
        pool
    };

    let init = init_params(train.dim(), rc.hidden(), train.num_classes(), cfg.seed)?;
    let mut recorder = RunRecorder::new(&run_dir, rc.checkpoint_every(), "warmup")?;
    let (params, _) = train_supervised_with(init, &train, &eval, &cfg, &mut recorder)?;
    params.save(run_dir.join("baseline.ckpt"))?;
    let metrics = evaluate(&params, &eval)?;
    println!("baseline macro_f1 {:.4} accuracy {:.4}", metrics.macro_f1, metrics.accuracy);
    println!("run directory {}", run_dir.display());
    Ok(run_dir)
}

pub struct TrainBgrpoArgs {
    pub config: RunConfig,
    pub output_root: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

fn load_teacher(rc: &RunConfig) -> Result<Option<TeacherSource>> {
    let Some(path) = rc.paths.teacher.as_ref() else {
        return Ok(None);
    };
    let path = require(Some(path), "teacher")?;
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    if looks_like_checkpoint(&text) {
        if rc.paths.teacher_features.is_none() {
            return Err(Error::Config("a teacher checkpoint needs --teacher-features".into()));
        }
        let features = require(rc.paths.teacher_features.as_ref(), "teacher feature")?;
        let view = load_feature_file(&features)?;
        make_teacher_from_checkpoint(&path, &view).map(Some)
    } else {
        load_teacher_predictions(&path).map(|t| Some(TeacherSource::Table(t)))
    }
}

pub fn train_bgrpo(args: &TrainBgrpoArgs) -> Result<PathBuf> {
    let rc = &args.config;
    let cfg = rc.bgrpo()?;
    let reward = rc.reward_config()?;
    if reward.kind.needs_teacher() && rc.paths.teacher.is_none() {
        return Err(Error::Config(format!("reward {} requires --teacher", reward.kind)));
    }
    let baseline_path = require(rc.paths.baseline.as_ref(), "baseline checkpoint")?;
    let rl_path = require(rc.paths.rl.as_ref(), "refinement")?;
    let eval_path = require(rc.paths.eval.as_ref(), "evaluation")?;
    let baseline = PolicyParams::load(&baseline_path)?;
    let rl = load_feature_file(&rl_path)?;
    let eval = load_feature_file(&eval_path)?;
    let teacher = if reward.kind.needs_teacher() { load_teacher(rc)? } else { None };

    let root = rc.output_root(args.output_root.as_deref());
    let run_dir = create_run_dir(&root, "bgrpo", args.run_dir.as_deref())?;
    let mut snapshot = rc.resolved(&root)?;
    snapshot.model.hidden = Some(baseline.hidden());
    write_text(&run_dir.join("config.toml"), &snapshot.to_toml())?;

    let before = evaluate(&baseline, &eval)?;
    let mut recorder = RunRecorder::new(&run_dir, rc.checkpoint_every(), "bgrpo")?;
    let (params, report) =
        train_bgrpo_with(baseline, rl.unlabeled(), &eval, &reward, teacher.as_ref(), &cfg, &mut recorder)?;
    params.save(run_dir.join("bgrpo.ckpt"))?;
    let after = evaluate(&params, &eval)?;
    let best = report.best_epoch().map_or("none".to_string(), |e| e.to_string());
    write_text(
        &run_dir.join("summary.toml"),
        &format!(
            "baseline_macro_f1 = {}\nfinal_macro_f1 = {}\nfinal_accuracy = {}\nbest_epoch = \"{best}\"\n",
            before.macro_f1, after.macro_f1, after.accuracy
        ),
    )?;
    println!(
        "macro_f1 {:.4} -> {:.4} (best epoch {best})",
        before.macro_f1, after.macro_f1
    );
    println!("run directory {}", run_dir.display());
    Ok(run_dir)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub eval: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let params = PolicyParams::load(require(Some(&args.checkpoint), "checkpoint")?)?;
    let data = load_feature_file(require(Some(&args.eval), "evaluation")?)?;
    let metrics = evaluate(&params, &data)?;
    let record = EpochRecord {
        epoch: 0,
        stage: Stage::Eval,
        loss: cross_entropy(&params, &data)?,
        macro_f1: metrics.macro_f1,
        mean_reward: None,
        frac_pos_adv: None,
        frac_degenerate_batches: None,
    };
    println!("macro_f1 {:.4}", metrics.macro_f1);
    println!("accuracy {:.4}", metrics.accuracy);
    println!("loss {:.6}", record.loss);
    for (k, f1) in metrics.per_class_f1.iter().enumerate() {
        match f1 {
            Some(v) => println!("class {k} f1 {v:.4}"),
            None => println!("class {k} f1 -"),
        }
    }
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = args.eval.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
        sibling(&args.checkpoint, &format!("_eval_{stem}"), "csv")
    });
    let mut w = ReportWriter::create(&out)?;
    w.write(&record)?;
    println!("metrics written to {}", out.display());
    Ok(())
}

pub struct GradcheckArgs {
    pub kinds: Vec<LossKind>,
    pub spec: GradCheckSpec,
    pub h: f64,
    pub tol: f64,
}

/// Returns whether every requested loss passed.
pub fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let mut all = true;
    for &kind in &args.kinds {
        let report = grad_check(kind, &args.spec, args.h, args.tol)?;
        println!(
            "{kind}: max relative error {:.3e} over {} parameters (tol {:e}) {}",
            report.max_rel_error,
            report.num_params,
            args.tol,
            if report.passed { "PASS" } else { "FAIL" }
        );
        all &= report.passed;
    }
    Ok(all)
}
