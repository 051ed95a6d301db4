use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use sdrsynth::align::{align_translation, apply_offset};
use sdrsynth::io::{load_image, save_image, BitDepth};
use sdrsynth::metrics::{self, Metric, MetricReport};
use sdrsynth::region::{HtmpConfig, HtmpSupervision, RadianceMode, Thresholds};
use sdrsynth::synthnet::{self, weights_io, AdamConfig, ArchConfig, Generator, TrainConfig, Trainer};
use sdrsynth::tmo::{self, Exposure, Normalization};
use sdrsynth::{Gamut, Image, Lut3D, Tmo, Transfer};

#[derive(Parser, Debug)]
#[command(name = "sdrsynth", version, about = "HDR-to-SDR training data synthesis")]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "SDRSYNTH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tone-map an HDR frame with a baseline operator.
    Convert(ConvertArgs),
    /// Build the region-aware supervision target of an HDR frame.
    Target(TargetArgs),
    /// Train the synthesis network on a folder of HDR frames.
    Train(TrainArgs),
    /// Run a trained network on one HDR frame.
    Synth(SynthArgs),
    /// Full-reference metrics over image pairs.
    Eval(EvalArgs),
    /// TMQI versus PSNR/CIEDE2000 scatter over a set of operators.
    Analyze(AnalyzeArgs),
    /// Estimate global integer translations between paired frames.
    Align(AlignArgs),
    /// Write identity or baked 3D LUTs.
    #[command(subcommand)]
    Lut(LutCommand),
    /// Write a synthetic PQ BT.2020 corpus.
    GenCorpus(GenCorpusArgs),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
enum GamutArg {
    Bt709,
    Bt2020,
}

impl From<GamutArg> for Gamut {
    fn from(g: GamutArg) -> Self {
        match g {
            GamutArg::Bt709 => Gamut::Bt709,
            GamutArg::Bt2020 => Gamut::Bt2020,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
enum TransferArg {
    Linear,
    Pq,
    Gamma709,
}

impl From<TransferArg> for Transfer {
    fn from(t: TransferArg) -> Self {
        match t {
            TransferArg::Linear => Transfer::Linear,
            TransferArg::Pq => Transfer::Pq,
            TransferArg::Gamma709 => Transfer::Gamma709,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum TmoArg {
    Clip,
    Linear,
    Reinhard,
    Hable,
    MulawCgm,
    Lut,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RadianceArg {
    Luminance,
    MaxRgb,
}

#[derive(Args, Debug, Clone)]
struct OutputOpts {
    /// Bit depth of PNG outputs (PFM outputs are always float).
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(8..=16))]
    bits: u32,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[arg(long, value_enum)]
    tmo: TmoArg,
    /// `.cube` file for `--tmo lut`.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, default_value_t = sdrsynth::colorimetry::MuLaw::DEFAULT_MU)]
    mu: f64,
    /// Fixed exposure for Reinhard/Hable instead of the geometric-mean rule.
    #[arg(long)]
    exposure: Option<f64>,
    #[arg(long, value_enum, default_value = "bt2020")]
    in_gamut: GamutArg,
    #[arg(long, value_enum, default_value = "pq")]
    in_transfer: TransferArg,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Args, Debug)]
struct HtmpArgs {
    /// Upper percentile of scene radiance.
    #[arg(long, default_value_t = 95.0)]
    a: f64,
    /// Lower percentile of scene radiance.
    #[arg(long, default_value_t = 5.0)]
    b: f64,
    /// Absolute upper threshold (normalized linear light); needs `--beta`.
    #[arg(long, requires = "beta")]
    alpha: Option<f64>,
    /// Absolute lower threshold (normalized linear light); needs `--alpha`.
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    #[arg(long, default_value_t = sdrsynth::colorimetry::MuLaw::DEFAULT_MU)]
    mu: f64,
    /// `.cube` file for the mid-tone operator; a baked filmic LUT otherwise.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "luminance")]
    radiance: RadianceArg,
}

#[derive(Args, Debug)]
struct TargetArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    htmp: HtmpArgs,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Folder of PQ BT.2020 frames.
    #[arg(long)]
    data: PathBuf,
    /// Folder of real SDR frames with matching file names.
    #[arg(long)]
    real_sdr: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "off")]
    adversarial: OnOff,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    patches_per_frame: usize,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Loss trace CSV; defaults to `<output>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    htmp: HtmpArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// `.cube` file for the LUT condition; a baked filmic LUT otherwise.
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// CSV with `candidate,reference` columns; relative paths resolve
    /// against the CSV's folder.
    #[arg(long, conflicts_with_all = ["candidates", "references"])]
    pairs: Option<PathBuf>,
    #[arg(long, requires = "references")]
    candidates: Option<PathBuf>,
    #[arg(long, requires = "candidates")]
    references: Option<PathBuf>,
    /// Comma-separated subset of psnr,mpsnr,ssim,ms_ssim,ciede2000,delta_e_itp,tmqi.
    #[arg(long, default_value = "psnr,ssim,ciede2000")]
    metrics: String,
    #[arg(long, value_enum, default_value = "bt709")]
    cand_gamut: GamutArg,
    #[arg(long, value_enum, default_value = "gamma709")]
    cand_transfer: TransferArg,
    #[arg(long, value_enum, default_value = "bt709")]
    ref_gamut: GamutArg,
    #[arg(long, value_enum, default_value = "gamma709")]
    ref_transfer: TransferArg,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    hdr: PathBuf,
    /// Ground-truth SDR frames with file names matching `--hdr`.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "clip,linear,reinhard,hable,mulaw-cgm,lut")]
    tmos: String,
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long, default_value_t = sdrsynth::colorimetry::MuLaw::DEFAULT_MU)]
    mu: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 5)]
    radius: u32,
    /// Flag pairs whose best-offset MSE exceeds this value.
    #[arg(long)]
    max_residual: Option<f64>,
    /// Write the aligned overlapping crops to `<DIR>/a` and `<DIR>/b`.
    #[arg(long)]
    apply: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bt709")]
    gamut: GamutArg,
    #[arg(long, value_enum, default_value = "gamma709")]
    transfer: TransferArg,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Subcommand, Debug)]
enum LutCommand {
    Identity {
        #[arg(long, default_value_t = 33)]
        size: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Sample a frame-independent operator on a lattice.
    Bake {
        #[arg(long, value_enum)]
        tmo: TmoArg,
        #[arg(long, default_value_t = 33)]
        size: usize,
        /// Exposure of Reinhard/Hable; defaults to 100 cd/m² at x = 1.
        #[arg(long, default_value_t = tmo::STANDIN_EXPOSURE)]
        exposure: f64,
        #[arg(long, default_value_t = sdrsynth::colorimetry::MuLaw::DEFAULT_MU)]
        mu: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output folder.
    #[arg(short, long)]
    output: PathBuf,
}

/// Record written next to every output.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    subcommand: String,
    args: Vec<String>,
    threads: Option<usize>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: Value,
}

struct Ctx {
    args: Vec<String>,
    threads: Option<usize>,
}

impl Ctx {
    fn manifest(
        &self,
        subcommand: &str,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        config: Value,
    ) -> anyhow::Result<()> {
        let anchor = outputs.first().ok_or_else(|| anyhow!("no outputs"))?;
        let path = with_suffix(anchor, ".manifest.json");
        let m = RunManifest {
            tool: "sdrsynth".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            args: self.args.clone(),
            threads: self.threads,
            seed,
            inputs,
            outputs,
            config,
        };
        write_text(&path, &serde_json::to_string_pretty(&m)?)
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).map_err(|e| sdrsynth::Error::Io { path: path.into(), source: e })?;
    Ok(BufWriter::new(f))
}

fn depth(o: &OutputOpts) -> sdrsynth::Result<BitDepth> {
    BitDepth::from_bits(o.bits)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pfm"))
}

/// Image files of a folder, sorted by name.
fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| sdrsynth::Error::Io { path: dir.into(), source: e })?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.is_file() && is_image(&p) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Pairs two folders by file name; any unmatched name is an error.
fn pair_dirs(a: &Path, b: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    let fa = list_images(a)?;
    let fb = list_images(b)?;
    let names = |v: &[PathBuf]| -> Vec<String> {
        v.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
    };
    let (na, nb) = (names(&fa), names(&fb));
    if na != nb {
        let only_a: Vec<_> = na.iter().filter(|n| !nb.contains(n)).collect();
        let only_b: Vec<_> = nb.iter().filter(|n| !na.contains(n)).collect();
        return Err(sdrsynth::Error::SizeMismatch(format!(
            "unpaired inputs: only in {}: {only_a:?}; only in {}: {only_b:?}",
            a.display(),
            b.display()
        ))
        .into());
    }
    if fa.is_empty() {
        return Err(sdrsynth::Error::InvalidParameter(format!("no images in {}", a.display())).into());
    }
    Ok(fa.into_iter().zip(fb).collect())
}

fn load_hdr(p: &Path) -> sdrsynth::Result<Image> {
    load_image(p, Gamut::Bt2020, Transfer::Pq)
}

fn load_sdr(p: &Path) -> sdrsynth::Result<Image> {
    load_image(p, Gamut::Bt709, Transfer::Gamma709)
}

fn load_lut_or_standin(p: &Option<PathBuf>) -> anyhow::Result<Arc<Lut3D>> {
    Ok(Arc::new(match p {
        Some(p) => Lut3D::load(p)?,
        None => tmo::standin_lut(),
    }))
}

fn lut_source(p: &Option<PathBuf>) -> Value {
    match p {
        Some(p) => json!(p),
        None => json!(format!("standin hable exposure={} size={}", tmo::STANDIN_EXPOSURE, tmo::STANDIN_SIZE)),
    }
}

fn build_tmo(kind: TmoArg, lut: &Option<PathBuf>, mu: f64, exposure: Option<f64>) -> anyhow::Result<Tmo> {
    let exp = exposure.map_or(Exposure::GeometricMean, Exposure::Fixed);
    Ok(match kind {
        TmoArg::Clip => Tmo::clip(),
        TmoArg::Linear => Tmo::linear(),
        TmoArg::Reinhard => Tmo::Reinhard(exp),
        TmoArg::Hable => Tmo::Hable(exp),
        TmoArg::MulawCgm => Tmo::mulaw_cgm(mu)?,
        TmoArg::Lut => match lut {
            Some(p) => Tmo::Lut(Arc::new(Lut3D::load(p)?)),
            None => {
                return Err(sdrsynth::Error::InvalidParameter("--tmo lut needs --lut FILE".into()).into())
            }
        },
    })
}

fn tmo_config(t: &Tmo) -> Value {
    match t {
        Tmo::Clip(n) | Tmo::Linear(n) => json!({"tmo": t.name(), "normalization": format!("{n:?}")}),
        Tmo::Reinhard(e) | Tmo::Hable(e) => json!({"tmo": t.name(), "exposure": format!("{e:?}")}),
        Tmo::MuLawCgm(m) => json!({"tmo": t.name(), "mu": m.mu()}),
        Tmo::Lut(l) => json!({"tmo": t.name(), "lut_size": l.size()}),
    }
}

fn htmp_config(a: &HtmpArgs) -> anyhow::Result<(HtmpConfig, Value)> {
    let thresholds = match (a.alpha, a.beta) {
        (Some(alpha), Some(beta)) => Thresholds::Fixed { alpha, beta },
        _ => Thresholds::Percentile { a: a.a, b: a.b },
    };
    let radiance = match a.radiance {
        RadianceArg::Luminance => RadianceMode::Luminance,
        RadianceArg::MaxRgb => RadianceMode::MaxRgb,
    };
    let cfg = HtmpConfig {
        thresholds,
        mu: sdrsynth::colorimetry::MuLaw::new(a.mu)?,
        radiance,
        lut: load_lut_or_standin(&a.lut)?,
        ..Default::default()
    };
    cfg.validate()?;
    let echo = json!({
        "thresholds": thresholds,
        "mu": a.mu,
        "radiance": format!("{radiance:?}"),
        "lut": lut_source(&a.lut),
        "linear_normalization": cfg.linear,
    });
    Ok((cfg, echo))
}

fn cmd_convert(ctx: &Ctx, a: ConvertArgs) -> anyhow::Result<()> {
    let tmo = build_tmo(a.tmo, &a.lut, a.mu, a.exposure)?;
    let h = load_image(&a.input, a.in_gamut.into(), a.in_transfer.into())?;
    let s = tmo.apply(&h)?;
    save_image(&s, &a.output, depth(&a.out)?)?;
    let mut cfg = tmo_config(&tmo);
    cfg["in_gamut"] = json!(a.in_gamut);
    cfg["in_transfer"] = json!(a.in_transfer);
    cfg["bits"] = json!(a.out.bits);
    if let Some(p) = &a.lut {
        cfg["lut_path"] = json!(p);
    }
    ctx.manifest("convert", None, vec![a.input], vec![a.output], cfg)
}

fn cmd_target(ctx: &Ctx, a: TargetArgs) -> anyhow::Result<()> {
    let (cfg, echo) = htmp_config(&a.htmp)?;
    let h = load_hdr(&a.input)?;
    let sup = HtmpSupervision::new(&h, &cfg)?;
    save_image(&sup.target, &a.output, depth(&a.out)?)?;
    let sidecar = with_suffix(&a.output, ".json");
    write_text(&sidecar, &serde_json::to_string_pretty(&sup.stats())?)?;
    let mut echo = echo;
    echo["bits"] = json!(a.out.bits);
    ctx.manifest("target", None, vec![a.input], vec![a.output, sidecar], echo)
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let adversarial = a.adversarial == OnOff::On;
    let files = list_images(&a.data)?;
    if files.is_empty() {
        return Err(sdrsynth::Error::InvalidParameter(format!("no HDR frames in {}", a.data.display())).into());
    }
    let frames = files.iter().map(|p| load_hdr(p)).collect::<sdrsynth::Result<Vec<_>>>()?;
    let real = match (&a.real_sdr, adversarial) {
        (Some(dir), _) => {
            let pairs = pair_dirs(&a.data, dir)?;
            Some(pairs.iter().map(|(_, s)| load_sdr(s)).collect::<sdrsynth::Result<Vec<_>>>()?)
        }
        (None, true) => {
            return Err(sdrsynth::Error::InvalidParameter("--adversarial on needs --real-sdr DIR".into()).into())
        }
        (None, false) => None,
    };
    let cfg = TrainConfig {
        seed: a.seed,
        adam: AdamConfig { lr: a.lr, ..Default::default() },
        lambda: a.lambda,
        steps: a.steps,
        patch_size: a.patch_size,
        batch_size: a.batch_size,
        patches_per_frame: a.patches_per_frame,
        adversarial,
    };
    cfg.validate()?;
    let (htmp, htmp_echo) = htmp_config(&a.htmp)?;
    let samples = synthnet::prepare_samples(&frames, real.as_deref(), &htmp, &cfg)?;
    let gen = match &a.init {
        Some(p) => weights_io::load_generator(p)?,
        None => Generator::init(ArchConfig::default(), a.seed),
    };
    let mut trainer = Trainer::new(gen, cfg)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let row = trainer.step(&samples)?;
        log::info!("step {} l_htmp {:.6} l_adv_g {:.6} l_adv_d {:.6}", row.step, row.l_htmp, row.l_adv_g, row.l_adv_d);
        trace.push(row);
    }
    weights_io::save_generator(&trainer.gen, &a.output)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| with_suffix(&a.output, ".trace.csv"));
    let mut w = create(&trace_path)?;
    synthnet::train::write_trace_csv(&mut w, &trace)?;
    w.flush()?;
    let mut inputs = files;
    if let Some(d) = &a.real_sdr {
        inputs.push(d.clone());
    }
    if let Some(p) = &a.init {
        inputs.push(p.clone());
    }
    let config = json!({
        "train": cfg,
        "htmp": htmp_echo,
        "arch": trainer.gen.arch.describe(),
        "real_sdr": if a.real_sdr.is_some() { "folder" } else { "htmp target" },
    });
    ctx.manifest("train", Some(a.seed), inputs, vec![a.output, trace_path], config)
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let gen = weights_io::load_generator(&a.weights)?;
    let lut = load_lut_or_standin(&a.lut)?;
    let h = load_hdr(&a.input)?;
    let s = synthnet::synthesize(&gen, &h, &lut)?;
    save_image(&s, &a.output, depth(&a.out)?)?;
    let cfg = json!({"arch": gen.arch.describe(), "lut": lut_source(&a.lut), "bits": a.out.bits});
    ctx.manifest("synth", None, vec![a.input, a.weights], vec![a.output], cfg)
}

fn parse_metrics(list: &str) -> anyhow::Result<Vec<Metric>> {
    let mut out = Vec::new();
    for s in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m = Metric::parse(s)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!(sdrsynth::Error::InvalidParameter("empty metric list".into()));
    }
    Ok(out)
}

fn read_pairs_csv(path: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| sdrsynth::Error::Io { path: path.into(), source: e })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("candidate,reference")) {
            continue;
        }
        let (c, r) = line.split_once(',').ok_or_else(|| sdrsynth::Error::Parse {
            line: i + 1,
            msg: "expected candidate,reference".into(),
        })?;
        pairs.push((base.join(c.trim()), base.join(r.trim())));
    }
    if pairs.is_empty() {
        bail!(sdrsynth::Error::InvalidParameter(format!("no pairs in {}", path.display())));
    }
    Ok(pairs)
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> anyhow::Result<()> {
    let metrics = parse_metrics(&a.metrics)?;
    let (pairs, inputs) = match (&a.pairs, &a.candidates, &a.references) {
        (Some(p), _, _) => (read_pairs_csv(p)?, vec![p.clone()]),
        (None, Some(c), Some(r)) => (pair_dirs(c, r)?, vec![c.clone(), r.clone()]),
        _ => bail!(sdrsynth::Error::InvalidParameter("give --pairs CSV or --candidates DIR --references DIR".into())),
    };
    let mut reports = Vec::with_capacity(pairs.len());
    for (c, r) in &pairs {
        let ci = load_image(c, a.cand_gamut.into(), a.cand_transfer.into())?;
        let ri = load_image(r, a.ref_gamut.into(), a.ref_transfer.into())?;
        reports.push(MetricReport::compute(&c.display().to_string(), &r.display().to_string(), &ci, &ri, &metrics)?);
    }
    let mut w = create(&a.output)?;
    metrics::write_report_csv(&mut w, &reports, &metrics)?;
    w.flush()?;
    let cfg = json!({
        "metrics": metrics.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "candidate_tags": [a.cand_gamut, a.cand_transfer],
        "reference_tags": [a.ref_gamut, a.ref_transfer],
        "psnr_cap": metrics::PSNR_CAP,
        "mpsnr_stops": metrics::MPSNR_STOPS,
        "mpsnr_gamma": metrics::MPSNR_GAMMA,
        "mpsnr_white_nits": metrics::MPSNR_WHITE_NITS,
        "ssim_window": metrics::SSIM_WINDOW,
        "ssim_sigma": metrics::SSIM_SIGMA,
        "ms_ssim_weights": metrics::MS_SSIM_WEIGHTS,
    });
    ctx.manifest("eval", None, inputs, vec![a.output], cfg)
}

fn parse_tmos(list: &str, lut: &Option<PathBuf>, mu: f64) -> anyhow::Result<Vec<Tmo>> {
    let mut out = Vec::new();
    for s in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = TmoArg::from_str(s, true)
            .map_err(|_| sdrsynth::Error::InvalidParameter(format!("unknown TMO {s:?}")))?;
        out.push(match kind {
            TmoArg::Lut => Tmo::Lut(load_lut_or_standin(lut)?),
            k => build_tmo(k, lut, mu, None)?,
        });
    }
    if out.is_empty() {
        bail!(sdrsynth::Error::InvalidParameter("empty TMO list".into()));
    }
    Ok(out)
}

fn cmd_analyze(ctx: &Ctx, a: AnalyzeArgs) -> anyhow::Result<()> {
    let tmos = parse_tmos(&a.tmos, &a.lut, a.mu)?;
    let pairs = pair_dirs(&a.hdr, &a.gt)?;
    let mut hdr = Vec::with_capacity(pairs.len());
    let mut gt = Vec::with_capacity(pairs.len());
    for (h, s) in &pairs {
        hdr.push(load_hdr(h)?);
        gt.push(load_sdr(s)?);
    }
    let rows = metrics::analyze_tmos(&hdr, &gt, &tmos)?;
    let mut w = create(&a.output)?;
    metrics::write_scatter_csv(&mut w, &rows)?;
    w.flush()?;
    let cfg = json!({
        "tmos": tmos.iter().map(tmo_config).collect::<Vec<_>>(),
        "lut": lut_source(&a.lut),
        "tmqi": {
            "a": metrics::tmqi_params::A,
            "alpha": metrics::tmqi_params::ALPHA,
            "beta": metrics::tmqi_params::BETA,
            "finest_freq": metrics::tmqi_params::FINEST_FREQ,
            "block": metrics::tmqi_params::BLOCK,
        },
    });
    ctx.manifest("analyze", None, vec![a.hdr, a.gt], vec![a.output], cfg)
}

fn cmd_align(ctx: &Ctx, a: AlignArgs) -> anyhow::Result<()> {
    let pairs = pair_dirs(&a.a, &a.b)?;
    let (gamut, transfer) = (a.gamut.into(), a.transfer.into());
    if let Some(dir) = &a.apply {
        for sub in ["a", "b"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| sdrsynth::Error::Io { path: d.clone(), source: e })?;
        }
    }
    let mut w = create(&a.output)?;
    writeln!(w, "name,dx,dy,residual,flagged")?;
    for (pa, pb) in &pairs {
        let ia = load_image(pa, gamut, transfer)?;
        let ib = load_image(pb, gamut, transfer)?;
        let al = align_translation(&ia, &ib, a.radius)?;
        let flagged = a.max_residual.is_some_and(|m| al.residual > m);
        if flagged {
            log::warn!("{}: residual {} above limit", pa.display(), al.residual);
        }
        let name = pa.file_name().unwrap();
        writeln!(w, "{},{},{},{},{}", name.to_string_lossy(), al.offset.dx, al.offset.dy, al.residual, flagged)?;
        if let Some(dir) = &a.apply {
            let (ca, cb) = apply_offset(&ia, &ib, al.offset)?;
            save_image(&ca, dir.join("a").join(name), depth(&a.out)?)?;
            save_image(&cb, dir.join("b").join(name), depth(&a.out)?)?;
        }
    }
    w.flush()?;
    let mut outputs = vec![a.output];
    outputs.extend(a.apply.clone());
    let cfg = json!({
        "radius": a.radius,
        "max_residual": a.max_residual,
        "tags": [a.gamut, a.transfer],
        "bits": a.out.bits,
    });
    ctx.manifest("align", None, vec![a.a, a.b], outputs, cfg)
}

fn cmd_lut(ctx: &Ctx, c: LutCommand) -> anyhow::Result<()> {
    match c {
        LutCommand::Identity { size, output } => {
            Lut3D::identity(size)?.save(&output)?;
            ctx.manifest("lut identity", None, vec![], vec![output], json!({"size": size}))
        }
        LutCommand::Bake { tmo: kind, size, exposure, mu, output } => {
            let t = match kind {
                TmoArg::Clip => Tmo::Clip(Normalization::ReferenceWhite),
                TmoArg::Linear => Tmo::Linear(Normalization::ReferenceWhite),
                TmoArg::Reinhard => Tmo::Reinhard(Exposure::Fixed(exposure)),
                TmoArg::Hable => Tmo::Hable(Exposure::Fixed(exposure)),
                TmoArg::MulawCgm => Tmo::mulaw_cgm(mu)?,
                TmoArg::Lut => bail!(sdrsynth::Error::InvalidParameter("cannot bake a LUT from a LUT".into())),
            };
            tmo::bake_lut(&t, size)?.save(&output)?;
            let mut cfg = tmo_config(&t);
            cfg["size"] = json!(size);
            ctx.manifest("lut bake", None, vec![], vec![output], cfg)
        }
    }
}

fn cmd_gen_corpus(ctx: &Ctx, a: GenCorpusArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&a.output).map_err(|e| sdrsynth::Error::Io { path: a.output.clone(), source: e })?;
    let frames = sdrsynth::synthetic::synthetic_corpus(a.seed, a.count, a.width, a.height)?;
    let mut outputs = vec![a.output.clone()];
    for (i, f) in frames.iter().enumerate() {
        let p = a.output.join(format!("frame_{i:04}.png"));
        save_image(f, &p, BitDepth::Sixteen)?;
        outputs.push(p);
    }
    let cfg = json!({"count": a.count, "width": a.width, "height": a.height, "bits": 16});
    let anchor = a.output.join("corpus");
    outputs[0] = anchor;
    ctx.manifest("gen-corpus", Some(a.seed), vec![], outputs, cfg)
}

fn run(cli: Cli, args: Vec<String>) -> anyhow::Result<()> {
    if let Command::Replay { manifest } = &cli.command {
        let text = fs::read_to_string(manifest).map_err(|e| sdrsynth::Error::Io { path: manifest.clone(), source: e })?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| sdrsynth::Error::Parse { line: e.line(), msg: e.to_string() })?;
        let mut argv = vec!["sdrsynth".to_string()];
        argv.extend(m.args.iter().cloned());
        let mut inner = Cli::try_parse_from(&argv)?;
        if matches!(inner.command, Command::Replay { .. }) {
            bail!(sdrsynth::Error::InvalidParameter("manifest records another replay".into()));
        }
        // Flag wins, then the recorded count, then single-threaded.
        inner.threads = cli.threads.or(m.threads).or(Some(1));
        return run(inner, m.args);
    }

    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(sdrsynth::Error::InvalidParameter("--threads must be >= 1".into()));
        }
        // Ignored when a pool already exists (replay reuses the process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { args, threads: cli.threads };
    match cli.command {
        Command::Convert(a) => cmd_convert(&ctx, a),
        Command::Target(a) => cmd_target(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Analyze(a) => cmd_analyze(&ctx, a),
        Command::Align(a) => cmd_align(&ctx, a),
        Command::Lut(c) => cmd_lut(&ctx, c),
        Command::GenCorpus(a) => cmd_gen_corpus(&ctx, a),
        Command::Replay { .. } => unreachable!("handled above"),
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(e) = e.downcast_ref::<sdrsynth::Error>() {
        e.kind()
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else if e.downcast_ref::<clap::Error>().is_some() {
        "usage"
    } else {
        "other"
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {}: {msg}", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
