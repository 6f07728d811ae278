//! The `volseg` command line.
//!
//! Datasets are directories of DBV1 files: every `NAME.dbv` is an intensity
//! volume and `NAME.mask.dbv` next to it is its mask.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::{read_key_values, Profile, RunConfig};
use crate::data::{
    evaluate, export_slice, generate_phantom, read_intensity, read_mask, write_jsonl, write_volume, Axis, EvalCase,
    Mask, Volume,
};
use crate::error::{Error, Result};
use crate::nets::{
    count_spec_parameters, load_checkpoint, receptive_field, save_checkpoint, CountMode, Net, NetSpec,
};
use crate::pipeline::{
    localize, pad_to_min, remove_small_components, segment_box, segment_end_to_end, BoundingBox, InferenceRecord,
};
use crate::training::{
    train_localization, train_segmentation, LocalizationSet, SegmentationSet, StepRecord, TrainOptions,
};

const MASK_SUFFIX: &str = ".mask.dbv";

#[derive(Parser, Debug)]
#[command(name = "volseg", version, about = "Localize-then-segment engine for 3D grayscale volumes")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Worker threads; 1 gives byte-identical reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Plain `key = value` config file; flags win over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Override one config key, e.g. `--set seg_threshold=0.9`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_key_value)]
    overrides: Vec<(String, String)>,
    /// Seed for generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Full,
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic phantoms.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Train a localization or segmentation net.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Run trained nets on volumes.
    #[command(subcommand)]
    Infer(InferCmd),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Network analysis.
    #[command(subcommand)]
    Net(NetCmd),
    /// Image export.
    #[command(subcommand)]
    Export(ExportCmd),
}

#[derive(Subcommand, Debug)]
enum PhantomCmd {
    /// Generate a phantom volume and its mask.
    Gen(PhantomGenArgs),
}

#[derive(Args, Debug)]
struct PhantomGenArgs {
    /// Output volume, or a directory when `--count` is given.
    #[arg(long)]
    out: PathBuf,
    /// Mask path; defaults to `NAME.mask.dbv` beside the volume.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Write this many phantoms with consecutive seeds into `--out`.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum TrainCmd {
    /// Train the window classifier.
    Loc(TrainArgs),
    /// Train the segmentation net.
    Seg(TrainArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Step log, one `epoch= step= lr= loss=` line per step.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Stop every epoch after this many steps.
    #[arg(long)]
    max_steps_per_epoch: Option<usize>,
    /// Train without augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Subcommand, Debug)]
enum InferCmd {
    /// Place the segmentation box.
    Localize(LocalizeArgs),
    /// Segment inside a given box.
    Segment(SegmentArgs),
    /// Localize, segment and clean up.
    E2e(E2eArgs),
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Classifier checkpoint; repeat for a mean ensemble.
    #[arg(long = "loc", required = true)]
    loc: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    input: PathBuf,
    /// Segmentation checkpoint; repeat for an OR ensemble.
    #[arg(long = "seg", required = true)]
    seg: Vec<PathBuf>,
    /// Box anchor `x,y,z` in full-resolution voxels.
    #[arg(long, value_parser = parse_triple)]
    anchor: [usize; 3],
    #[arg(long)]
    out: PathBuf,
    /// Also drop small components.
    #[arg(long)]
    clean: bool,
}

#[derive(Args, Debug)]
struct E2eArgs {
    /// A volume, or a dataset directory.
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "loc", required = true)]
    loc: Vec<PathBuf>,
    #[arg(long = "seg", required = true)]
    seg: Vec<PathBuf>,
    /// Output mask, or a directory for directory input.
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines report, one record per volume.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory of ground-truth masks, for DSC in the report.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks, matched by file name.
    #[arg(long)]
    gt: PathBuf,
    /// JSON-lines file for per-volume records.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum NetCmd {
    /// Parameter count.
    Params(NetParamsArgs),
    /// Receptive field at the output.
    Rf(NetRfArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NetKind {
    Seg,
    Loc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Actual,
    DenseEquivalent,
}

#[derive(Args, Debug)]
struct NetParamsArgs {
    #[arg(long, value_enum)]
    net: NetKind,
    #[arg(long, value_enum, default_value = "actual")]
    mode: ModeArg,
    /// Also list every weighted layer.
    #[arg(long)]
    layers: bool,
}

#[derive(Args, Debug)]
struct NetRfArgs {
    #[arg(long, value_enum)]
    net: NetKind,
}

#[derive(Subcommand, Debug)]
enum ExportCmd {
    /// Write one slice (and optionally its mask) as binary PGM.
    Slice(ExportSliceArgs),
}

#[derive(Args, Debug)]
struct ExportSliceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "z")]
    axis: Axis,
    /// Slice index; defaults to the middle.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad coordinate in {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected x,y,z, got {s:?}"))
}

/// Parses `argv` (including the program name) and runs the command on
/// the process's stdout and stderr. Returns the exit status.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams. Usage text and diagnostics go to
/// `err`; `--help` and `--version` go to `out`.
pub fn run_with<I, S>(argv: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return e.exit_code();
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let g = &cli.global;
    let file = match &g.config {
        Some(p) => read_key_values(p)?,
        None => Vec::new(),
    };
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let profile = g.profile.map(|p| match p {
        ProfileArg::Full => Profile::Full,
        ProfileArg::Desk => Profile::Desk,
    });
    let cfg = RunConfig::resolve(profile, &file, &overrides)?;
    let ctx = Ctx { cfg, json: g.json };
    let body = || ctx.dispatch(cli.command, out);
    match g.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

struct Ctx {
    cfg: RunConfig,
    json: bool,
}

fn emit(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::Malformed(e.to_string()))?;
    emit(out, s)
}

fn mask_path_for(volume: &Path) -> PathBuf {
    let name = volume.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".dbv").unwrap_or(&name);
    volume.with_file_name(format!("{stem}{MASK_SUFFIX}"))
}

/// Intensity volumes of a dataset directory, sorted by name.
fn dataset_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            n.ends_with(".dbv") && !n.ends_with(MASK_SUFFIX)
        })
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::invalid(format!("no .dbv volumes in {}", dir.display())));
    }
    Ok(v)
}

fn load_pairs(dir: &Path) -> Result<Vec<(Volume<f32>, Mask)>> {
    dataset_volumes(dir)?
        .iter()
        .map(|p| Ok((read_intensity(p)?, read_mask(mask_path_for(p))?)))
        .collect()
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

impl Ctx {
    fn dispatch(&self, cmd: Command, out: &mut dyn Write) -> Result<()> {
        match cmd {
            Command::Phantom(PhantomCmd::Gen(a)) => self.phantom_gen(a, out),
            Command::Train(TrainCmd::Loc(a)) => self.train(false, a, out),
            Command::Train(TrainCmd::Seg(a)) => self.train(true, a, out),
            Command::Infer(InferCmd::Localize(a)) => self.infer_localize(a, out),
            Command::Infer(InferCmd::Segment(a)) => self.infer_segment(a, out),
            Command::Infer(InferCmd::E2e(a)) => self.infer_e2e(a, out),
            Command::Eval(a) => self.eval(a, out),
            Command::Net(NetCmd::Params(a)) => self.net_params(a, out),
            Command::Net(NetCmd::Rf(a)) => self.net_rf(a, out),
            Command::Export(ExportCmd::Slice(a)) => self.export_slice(a, out),
        }
    }

    fn phantom_gen(&self, a: PhantomGenArgs, out: &mut dyn Write) -> Result<()> {
        let jobs: Vec<(u64, PathBuf, PathBuf)> = match a.count {
            None => {
                let mask = a.mask.clone().unwrap_or_else(|| mask_path_for(&a.out));
                vec![(self.cfg.seed, a.out.clone(), mask)]
            }
            Some(n) => {
                if a.mask.is_some() {
                    return Err(Error::invalid("--mask cannot be combined with --count"));
                }
                std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
                (0..n as u64)
                    .map(|i| {
                        let seed = self.cfg.seed + i;
                        let v = a.out.join(format!("phantom_{seed:06}.dbv"));
                        let m = mask_path_for(&v);
                        (seed, v, m)
                    })
                    .collect()
            }
        };
        for (seed, vol_path, mask_path) in jobs {
            let (img, mask) = generate_phantom(&self.cfg.phantom, seed)?;
            ensure_parent(&vol_path)?;
            write_volume(&img, &vol_path)?;
            write_volume(&mask, &mask_path)?;
            if self.json {
                emit_json(
                    out,
                    &json!({
                        "seed": seed,
                        "volume": vol_path,
                        "mask": mask_path,
                        "dims": img.dims(),
                        "foreground_voxels": mask.count_nonzero(),
                    }),
                )?;
            } else {
                emit(
                    out,
                    format!(
                        "seed {seed}: {} {:?}, {} foreground voxels",
                        vol_path.display(),
                        img.dims(),
                        mask.count_nonzero()
                    ),
                )?;
            }
        }
        Ok(())
    }

    fn train(&self, segmentation: bool, a: TrainArgs, out: &mut dyn Write) -> Result<()> {
        let cfg = &self.cfg;
        let pairs = load_pairs(&a.data)?;
        let opts = TrainOptions {
            seed: cfg.seed,
            augment: !a.no_augment,
            max_steps_per_epoch: a.max_steps_per_epoch,
        };
        let mut log_lines = String::new();
        let mut on_step = |r: &StepRecord| {
            log_lines.push_str(&r.to_string());
            log_lines.push('\n');
        };
        let (net, records, examples) = if segmentation {
            let set = SegmentationSet::from_volumes(&pairs, cfg.pipeline.box_side, cfg.subvolume_fraction)?;
            let mut net = Net::new(cfg.seg_net.spec()?, cfg.seed)?;
            let recs = train_segmentation(&mut net, &set, &cfg.seg_sgd, cfg.seg_samples_per_epoch, &opts, &mut on_step)?;
            (net, recs, set.samples.len())
        } else {
            let set = LocalizationSet::from_config(&pairs, cfg, cfg.seed)?;
            let mut net = Net::new(cfg.loc_net.spec()?, cfg.seed)?;
            let recs = train_localization(&mut net, &set, &cfg.loc_sgd, &opts, &mut on_step)?;
            (net, recs, set.examples.len())
        };
        ensure_parent(&a.out)?;
        save_checkpoint(&net, &a.out)?;
        if let Some(p) = &a.log {
            ensure_parent(p)?;
            std::fs::write(p, log_lines).map_err(|e| Error::io(p, e))?;
        }
        let final_loss = records.last().map(|r| r.loss);
        if self.json {
            emit_json(
                out,
                &json!({
                    "checkpoint": a.out,
                    "volumes": pairs.len(),
                    "examples": examples,
                    "steps": records.len(),
                    "final_loss": final_loss,
                }),
            )
        } else {
            emit(
                out,
                format!(
                    "trained on {} volumes ({examples} examples), {} steps, final loss {:.6}; wrote {}",
                    pairs.len(),
                    records.len(),
                    final_loss.unwrap_or(f64::NAN),
                    a.out.display()
                ),
            )
        }
    }

    fn load_nets(&self, paths: &[PathBuf], expect_side: usize, what: &str) -> Result<Vec<Net<f32>>> {
        paths
            .iter()
            .map(|p| {
                let net = load_checkpoint(p)?;
                let side = net.spec().input_spatial;
                if side != [expect_side; 3] {
                    return Err(Error::Config(format!(
                        "{} takes {:?} inputs but the {what} side is {expect_side} (check --profile)",
                        p.display(),
                        side
                    )));
                }
                Ok(net)
            })
            .collect()
    }

    fn infer_localize(&self, a: LocalizeArgs, out: &mut dyn Write) -> Result<()> {
        let p = &self.cfg.pipeline;
        let nets = self.load_nets(&a.loc, p.window, "window")?;
        let img = read_intensity(&a.input)?;
        let padded = pad_to_min(&img, p.box_side);
        let r = localize(&padded.volume, &nets, p)?;
        if self.json {
            emit_json(out, &r)
        } else {
            emit(
                out,
                format!(
                    "box anchor {:?} side {}; {} of {} windows positive{}",
                    r.bbox.anchor,
                    r.bbox.side,
                    r.positives.len(),
                    r.windows_scanned,
                    if r.fallback { " (fallback to best window)" } else { "" }
                ),
            )
        }
    }

    fn infer_segment(&self, a: SegmentArgs, out: &mut dyn Write) -> Result<()> {
        let p = &self.cfg.pipeline;
        let nets = self.load_nets(&a.seg, p.box_side, "box")?;
        let img = read_intensity(&a.input)?;
        let padded = pad_to_min(&img, p.box_side);
        let bbox = BoundingBox {
            anchor: a.anchor,
            side: p.box_side,
        };
        let seg = segment_box(&padded.volume, bbox, &nets, p.seg_threshold)?;
        let (mask, census) = if a.clean {
            let (m, c) = remove_small_components(&seg.mask, p.min_component, p.connectivity);
            (m, Some(c))
        } else {
            (seg.mask, None)
        };
        let mask = padded.strip(&mask)?.with_spacing(img.spacing());
        ensure_parent(&a.out)?;
        write_volume(&mask, &a.out)?;
        if self.json {
            emit_json(
                out,
                &json!({"mask": a.out, "foreground_voxels": mask.count_nonzero(), "census": census}),
            )
        } else {
            emit(out, format!("{} foreground voxels; wrote {}", mask.count_nonzero(), a.out.display()))
        }
    }

    fn infer_e2e(&self, a: E2eArgs, out: &mut dyn Write) -> Result<()> {
        let p = &self.cfg.pipeline;
        let loc = self.load_nets(&a.loc, p.window, "window")?;
        let seg = self.load_nets(&a.seg, p.box_side, "box")?;
        let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            dataset_volumes(&a.input)?
                .into_iter()
                .map(|v| {
                    let o = a.out.join(file_name(&v));
                    (v, o)
                })
                .collect()
        } else {
            vec![(a.input.clone(), a.out.clone())]
        };
        let mut records = Vec::with_capacity(jobs.len());
        for (input, output) in &jobs {
            let img = read_intensity(input)?;
            let r = segment_end_to_end(&img, &loc, &seg, p)?;
            let truth = match &a.gt {
                Some(dir) => Some(read_gt(dir, &file_name(input))?),
                None => None,
            };
            ensure_parent(output)?;
            write_volume(&r.mask, output)?;
            let rec = InferenceRecord::new(file_name(input), &r, truth.as_ref())?;
            if self.json {
                emit_json(out, &rec)?;
            } else {
                let dsc = rec.dsc.map(|d| format!(", dsc {d:.4}")).unwrap_or_default();
                emit(
                    out,
                    format!(
                        "{}: box {:?}, {} foreground voxels{dsc}{}",
                        rec.name,
                        rec.bbox.anchor,
                        rec.foreground_voxels,
                        if rec.fallback { " (localization fallback)" } else { "" }
                    ),
                )?;
            }
            records.push(rec);
        }
        if let Some(path) = &a.report {
            ensure_parent(path)?;
            write_jsonl(path, &records)?;
        }
        Ok(())
    }

    fn eval(&self, a: EvalArgs, out: &mut dyn Write) -> Result<()> {
        let mut names: Vec<String> = std::fs::read_dir(&a.pred)
            .map_err(|e| Error::io(&a.pred, e))?
            .filter_map(|e| e.ok().map(|e| file_name(&e.path())))
            .filter(|n| n.ends_with(".dbv"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::invalid(format!("no .dbv masks in {}", a.pred.display())));
        }
        let mut pairs = Vec::with_capacity(names.len());
        for n in &names {
            pairs.push((read_mask(a.pred.join(n))?, read_gt(&a.gt, n)?));
        }
        let cases: Vec<EvalCase> = names
            .iter()
            .zip(&pairs)
            .map(|(n, (p, t))| EvalCase {
                name: n.clone(),
                prediction: p,
                truth: t,
                bbox: None,
            })
            .collect();
        let report = evaluate(&cases)?;
        if let Some(path) = &a.report {
            ensure_parent(path)?;
            write_jsonl(path, &report.volumes)?;
        }
        if self.json {
            emit_json(out, &report)
        } else {
            for v in &report.volumes {
                emit(out, format!("{}: dsc {:.4}", v.name, v.dsc))?;
            }
            emit(
                out,
                format!("mean dsc {:.4} over {} volumes, {} failures", report.mean_dsc, report.volumes.len(), report.failures),
            )
        }
    }

    fn spec_of(&self, net: NetKind) -> Result<NetSpec> {
        match net {
            NetKind::Seg => self.cfg.seg_net.spec(),
            NetKind::Loc => self.cfg.loc_net.spec(),
        }
    }

    fn net_params(&self, a: NetParamsArgs, out: &mut dyn Write) -> Result<()> {
        let mode = match a.mode {
            ModeArg::Actual => CountMode::Actual,
            ModeArg::DenseEquivalent => CountMode::DenseEquivalent,
        };
        let count = count_spec_parameters(&self.spec_of(a.net)?, mode);
        if self.json {
            return emit_json(out, &count);
        }
        if a.layers {
            for l in count.layers.iter().filter(|l| l.count > 0) {
                emit(out, format!("{:>4} {:<12} {}", l.node, l.kind, l.count))?;
            }
        }
        emit(out, count.total)
    }

    fn net_rf(&self, a: NetRfArgs, out: &mut dyn Write) -> Result<()> {
        let rf = receptive_field(&self.spec_of(a.net)?);
        if self.json {
            emit_json(out, &rf)
        } else {
            emit(out, format!("{} {} {}", rf.size[0], rf.size[1], rf.size[2]))
        }
    }

    fn export_slice(&self, a: ExportSliceArgs, out: &mut dyn Write) -> Result<()> {
        let img = read_intensity(&a.input)?;
        let mask = a.mask.as_ref().map(read_mask).transpose()?;
        let [nx, ny, nz] = img.dims();
        let index = a.index.unwrap_or(match a.axis {
            Axis::X => nx / 2,
            Axis::Y => ny / 2,
            Axis::Z => nz / 2,
        });
        ensure_parent(&a.out)?;
        let written = export_slice(&img, mask.as_ref(), a.axis, index, &a.out)?;
        if self.json {
            emit_json(out, &json!({"axis": a.axis, "index": index, "written": written}))
        } else {
            for w in written {
                emit(out, w.display())?;
            }
            Ok(())
        }
    }
}

/// Ground truth for `name`: `dir/STEM.mask.dbv`, else `dir/name`. The mask
/// name goes first so a dataset directory can serve as its own truth.
fn read_gt(dir: &Path, name: &str) -> Result<Mask> {
    let direct = dir.join(name);
    let sibling = mask_path_for(&direct);
    if sibling.is_file() {
        return read_mask(sibling);
    }
    read_mask(direct)
}
