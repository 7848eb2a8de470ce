use std::path::{Path, PathBuf};

use farspeech::config::KvConfig;
use farspeech::dataset::{load_split, write_dataset, DatasetConfig, Sample, SourceCorpus, SourceMaterial, Split};
use farspeech::dsp::{magnitude_phase, stft, FrameSpec};
use farspeech::mask::MaskKind;
use farspeech::nn::hparams::Hparams;
use farspeech::nn::{Checkpoint, CldnnConfig, CldnnLite, TcnConfig, TcnMaskNet, Tensor};
use farspeech::plot::{side_by_side, spectrogram_image};
use farspeech::train::{
    aligned_hole_fraction, am_examples, enhance_corpus, evaluate_with, joint_finetune, train_am, train_enhancement,
    write_log, AmCondition, HoleOptions, Regime, RegimeConfig,
};
use farspeech::wav::{read_wav, write_mono};
use farspeech::{Error, Result};
use serde::Serialize;

use crate::{Cli, Command, EnhanceArgs, EvaluateArgs, PlotArgs, SynthArgs, TrainArgs};

const GLOBAL_KEYS: [&str; 3] = ["seed", "deterministic", "threads"];
const DATASET_KEYS: [&str; 7] =
    ["n_train", "n_valid", "n_test", "duration_s", "speakers_train", "speakers_valid", "speakers_test"];
const TRAIN_KEYS: [&str; 8] =
    ["regime", "epochs", "batch_size", "lr", "alpha", "am_training_mix", "joint_sisnr_weight", "keep_best"];
const EVAL_KEYS: [&str; 2] = ["hole_floor_ratio", "hole_active_db"];

struct Ctx {
    workdir: PathBuf,
    cfg: KvConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.cfg
            .get(key)
            .map(|v| v.parse().map_err(|_| Error::InvalidArgument(format!("bad value {v:?} for {key}"))))
            .transpose()
    }

    fn seed(&self) -> Result<u64> {
        Ok(self.parsed("seed")?.unwrap_or(0))
    }

    /// Prints the configuration this run actually uses.
    fn emit(&self) {
        eprint!("# resolved config\n{}", self.cfg.to_text());
    }
}

fn check_keys(cfg: &KvConfig) -> Result<()> {
    for k in cfg.entries.keys() {
        let known = GLOBAL_KEYS.contains(&k.as_str())
            || DATASET_KEYS.contains(&k.as_str())
            || TRAIN_KEYS.contains(&k.as_str())
            || EVAL_KEYS.contains(&k.as_str())
            || k.starts_with("tcn.")
            || k.starts_with("am.");
        if !known {
            return Err(Error::InvalidArgument(format!("unknown configuration key {k:?}")));
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let workdir = g.workdir.clone();
    let mut cfg = match &g.config {
        Some(p) => KvConfig::load(&if p.is_absolute() { p.clone() } else { workdir.join(p) })?,
        None => KvConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.set("seed", s);
    }
    if g.deterministic {
        cfg.set("deterministic", true);
    }
    if let Some(t) = g.threads {
        cfg.set("threads", t);
    }
    check_keys(&cfg)?;
    let ctx = Ctx { workdir, cfg };
    if let Some(t) = ctx.parsed::<usize>("threads")? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::SynthDataset(a) => synth(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::Enhance(a) => enhance(ctx, a),
        Command::Evaluate(a) => evaluate_cmd(ctx, a),
        Command::Plot(a) => plot(ctx, a),
    }
}

fn synth(mut ctx: Ctx, a: SynthArgs) -> Result<()> {
    let c = &mut ctx.cfg;
    if let Some(n) = a.n_train {
        c.set("n_train", n);
    }
    if let Some(n) = a.n_valid {
        c.set("n_valid", n);
    }
    if let Some(n) = a.n_test {
        c.set("n_test", n);
    }
    if let Some(d) = a.duration {
        c.set("duration_s", d);
    }
    let d = DatasetConfig::default();
    let config = DatasetConfig {
        n_train: ctx.parsed("n_train")?.unwrap_or(d.n_train),
        n_valid: ctx.parsed("n_valid")?.unwrap_or(d.n_valid),
        n_test: ctx.parsed("n_test")?.unwrap_or(d.n_test),
        duration_s: ctx.parsed("duration_s")?.unwrap_or(d.duration_s),
        seed: ctx.seed()?,
        speakers: (
            ctx.parsed("speakers_train")?.unwrap_or(d.speakers.0),
            ctx.parsed("speakers_valid")?.unwrap_or(d.speakers.1),
            ctx.parsed("speakers_test")?.unwrap_or(d.speakers.2),
        ),
        sample_rate: d.sample_rate,
    };
    if !(config.duration_s > 0.0) {
        return Err(Error::InvalidArgument("duration must be positive".into()));
    }
    ctx.emit();
    let material = match &a.source_corpus {
        Some(dir) => SourceMaterial::Corpus(SourceCorpus::load(&ctx.path(dir))?),
        None => SourceMaterial::synthetic(&config),
    };
    let out = ctx.path(&a.out);
    std::fs::create_dir_all(&out)?;
    let written = write_dataset(&out, &config, &material)?;
    std::fs::write(out.join("dataset.config"), ctx.cfg.to_text())?;
    for (split, recs) in &written {
        println!("{}: {} scenes", split.name(), recs.len());
    }
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?}; expected train, valid or test")))
}

fn load_tcn(path: &Path) -> Result<TcnMaskNet> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != "tcn" {
        return Err(Error::Data(format!("{} holds a {} model, expected tcn", path.display(), ck.kind)));
    }
    TcnMaskNet::from_params(TcnConfig::from_hparams(&ck.hparams)?, &ck.params)
}

fn load_am(path: &Path) -> Result<CldnnLite> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != "cldnn" {
        return Err(Error::Data(format!("{} holds a {} model, expected cldnn", path.display(), ck.kind)));
    }
    CldnnLite::from_params(CldnnConfig::from_hparams(&ck.hparams)?, &ck.params)
}

/// Defaults overridden by `prefix.*` configuration keys.
fn merged(defaults: Hparams, cfg: &KvConfig, prefix: &str) -> Hparams {
    let mut h = defaults;
    for (k, v) in cfg.with_prefix(prefix) {
        h.insert(k.to_string(), v.to_string());
    }
    h
}

fn train(mut ctx: Ctx, a: TrainArgs) -> Result<()> {
    if let Some(r) = &a.regime {
        ctx.cfg.set("regime", r);
    }
    let regime: Regime = ctx
        .cfg
        .get("regime")
        .ok_or_else(|| Error::InvalidArgument("--regime is required".into()))?
        .parse()?;
    let mut rc = RegimeConfig::new(regime);
    for k in TRAIN_KEYS {
        if let Some(v) = ctx.cfg.get(k).map(str::to_string) {
            rc.set(k, &v)?;
        }
    }
    rc.seed = ctx.seed()?;
    rc.deterministic = ctx.parsed("deterministic")?.unwrap_or(false);
    if let Some(v) = a.epochs {
        rc.epochs = v;
    }
    if let Some(v) = a.lr {
        rc.lr = v;
    }
    if let Some(v) = a.batch_size {
        rc.batch_size = v;
    }
    if let Some(v) = a.alpha {
        rc.alpha = v;
    }
    if let Some(v) = &a.am_mix {
        rc.set("am_training_mix", v)?;
    }
    rc.validate()?;
    for (k, v) in rc.to_pairs() {
        ctx.cfg.set(&k, v);
    }
    let init = a.init_ckpt.as_ref().map(|p| ctx.path(p));
    let data = ctx.path(&a.data);
    let out = ctx.path(&a.out);
    std::fs::create_dir_all(&out)?;
    let name = regime.short_name();

    let log = if regime.is_enhancement() {
        let init = init.map(|p| load_tcn(&p)).transpose()?;
        let tcn = match &init {
            Some(n) => n.config,
            None => TcnConfig::from_hparams(&merged(TcnConfig::new(MaskKind::Cirm).to_hparams(), &ctx.cfg, "tcn."))?,
        };
        for (k, v) in (TcnConfig { mask_kind: regime.mask_kind().expect("enhancement"), ..tcn }).to_hparams() {
            ctx.cfg.set(&k, v);
        }
        ctx.emit();
        let (tr, va) = (load_split(&data, Split::Train)?, load_split(&data, Split::Valid)?);
        let t = train_enhancement(&rc, tcn, init.as_ref(), &tr, &va)?;
        t.checkpoint(&rc).save(&out.join(format!("{name}.ckpt")))?;
        t.log
    } else if regime == Regime::AmPretrain {
        let init = init.map(|p| load_am(&p)).transpose()?;
        let am = match &init {
            Some(n) => n.config,
            None => CldnnConfig::from_hparams(&merged(CldnnConfig::default().to_hparams(), &ctx.cfg, "am."))?,
        };
        for (k, v) in am.to_hparams() {
            ctx.cfg.set(&k, v);
        }
        ctx.emit();
        let (tr, va) = (load_split(&data, Split::Train)?, load_split(&data, Split::Valid)?);
        let (etr, eva) = if rc.am_training_mix.contains(&AmCondition::Enhanced) {
            let p = a.enh_ckpt.as_ref().ok_or_else(|| {
                Error::InvalidArgument("the enhanced condition needs --enh-ckpt".into())
            })?;
            let net = load_tcn(&ctx.path(p))?;
            (Some(enhance_corpus(&net, &tr)?), Some(enhance_corpus(&net, &va)?))
        } else {
            (None, None)
        };
        let xtr = am_examples(&tr, &rc.am_training_mix, etr.as_deref())?;
        let xva = am_examples(&va, &rc.am_training_mix, eva.as_deref())?;
        let t = train_am(&rc, am, init.as_ref(), &xtr, &xva)?;
        t.checkpoint(&rc).save(&out.join(format!("{name}.ckpt")))?;
        t.log
    } else {
        let enh_path = init.ok_or_else(|| Error::InvalidArgument("joint regimes need --init-ckpt (enhancement)".into()))?;
        let am_path = a
            .am_ckpt
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("joint regimes need --am-ckpt".into()))?;
        let enh = load_tcn(&enh_path)?;
        let am = load_am(&ctx.path(am_path))?;
        ctx.emit();
        let (tr, va) = (load_split(&data, Split::Train)?, load_split(&data, Split::Valid)?);
        let t = joint_finetune(&rc, &enh, &am, &tr, &va)?;
        let (ce, ca) = t.checkpoints(&rc);
        ce.save(&out.join(format!("{name}.enh.ckpt")))?;
        ca.save(&out.join(format!("{name}.am.ckpt")))?;
        t.log
    };
    write_log(&out.join(format!("{name}.log.jsonl")), &log)?;
    std::fs::write(out.join(format!("{name}.config")), ctx.cfg.to_text())?;
    if let Some(last) = log.last() {
        println!("{name}: {} epochs, final {} {:.4}", log.len(), last.valid_metric_name, last.valid_metric);
    }
    Ok(())
}

#[derive(Serialize)]
struct EnhancedRecord<'a> {
    id: &'a str,
    enhanced_wav: String,
    num_samples: usize,
}

fn enhance(ctx: Ctx, a: EnhanceArgs) -> Result<()> {
    ctx.emit();
    let net = load_tcn(&ctx.path(&a.ckpt))?;
    let samples = load_split(&ctx.path(&a.data), parse_split(&a.split)?)?;
    let out = ctx.path(&a.out);
    std::fs::create_dir_all(&out)?;
    let waves = enhance_corpus(&net, &samples)?;
    let mut manifest = String::new();
    for (s, w) in samples.iter().zip(&waves) {
        let file = format!("{}_enh.wav", s.record.id);
        write_mono(out.join(&file), w, s.mixture.sample_rate)?;
        let rec = EnhancedRecord { id: &s.record.id, enhanced_wav: file, num_samples: w.len() };
        manifest.push_str(&serde_json::to_string(&rec)?);
        manifest.push('\n');
    }
    std::fs::write(out.join("enhanced.jsonl"), manifest)?;
    println!("enhanced {} utterances", waves.len());
    Ok(())
}

fn hole_options(ctx: &Ctx) -> Result<HoleOptions> {
    let d = HoleOptions::default();
    Ok(HoleOptions {
        floor_ratio: ctx.parsed("hole_floor_ratio")?.unwrap_or(d.floor_ratio),
        active_db: ctx.parsed("hole_active_db")?.unwrap_or(d.active_db),
    })
}

fn evaluate_cmd(ctx: Ctx, a: EvaluateArgs) -> Result<()> {
    if a.cer && a.am_ckpt.is_none() {
        return Err(Error::InvalidArgument("--cer needs an acoustic model (--am-ckpt)".into()));
    }
    ctx.emit();
    let samples = load_split(&ctx.path(&a.data), parse_split(&a.split)?)?;
    let estimates = match &a.enh_ckpt {
        Some(p) => enhance_corpus(&load_tcn(&ctx.path(p))?, &samples)?,
        None => samples.iter().map(Sample::reference_mixture).collect(),
    };
    let am = a.am_ckpt.as_ref().map(|p| load_am(&ctx.path(p))).transpose()?;
    let report = evaluate_with(&samples, &estimates, am.as_ref(), hole_options(&ctx)?)?;
    std::fs::write(ctx.path(&a.report), report.to_jsonl()?)?;
    println!("{}", serde_json::to_string(&report.overall)?);
    Ok(())
}

fn magnitude(wave: &[f64]) -> Result<Tensor> {
    Ok(magnitude_phase(&stft(wave, &FrameSpec::default())?).0)
}

fn plot(ctx: Ctx, a: PlotArgs) -> Result<()> {
    ctx.emit();
    let out = ctx.path(&a.out);
    let img = if let Some(w) = &a.wav {
        let wave = read_wav(ctx.path(w))?;
        spectrogram_image(&magnitude(&wave.channel_vec(0))?, a.range_db)
    } else {
        let (Some(utt), Some(data)) = (&a.utt, &a.data) else {
            return Err(Error::InvalidArgument("plot needs --wav, or --utt with --data".into()));
        };
        let samples = load_split(&ctx.path(data), parse_split(&a.split)?)?;
        let s = samples
            .iter()
            .find(|s| &s.record.id == utt)
            .ok_or_else(|| Error::Data(format!("utterance {utt} not in the {} split", a.split)))?;
        let mut panels = vec![("reverb_target", s.reverb_target.clone()), ("mixture", s.reference_mixture())];
        if let Some(c) = &a.ckpt {
            let net = load_tcn(&ctx.path(c))?;
            let enh = enhance_corpus(&net, std::slice::from_ref(s))?.remove(0);
            panels.push(("enhanced", enh));
        }
        let opts = hole_options(&ctx)?;
        let mut images = Vec::new();
        for (name, wave) in &panels {
            let hf = aligned_hole_fraction(wave, &s.reverb_target, opts)?;
            println!("{name}: hole_fraction {hf:.4}");
            images.push(spectrogram_image(&magnitude(wave)?, a.range_db));
        }
        side_by_side(&images)
    };
    img.save(&out)?;
    println!("wrote {} ({}x{})", out.display(), img.width, img.height);
    Ok(())
}
