//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use magniflow::dmm::{make_schedule, sample_magnified_flow, DmmExample, MagnifierModel, TrainingData, LATENT_FACTOR};
use magniflow::flowcore::metrics::{flow_metrics, image_metrics};
use magniflow::flowcore::ppm::{frame_name, list_frames, list_with_extension};
use magniflow::flowcore::{estimate_flow_pyrlk, flow_to_color, read_flo, read_ppm, write_flo, write_ppm, FlowField, ImageBuffer, MetricReport};
use magniflow::fvs::{train_fvs as fit_synthesis, DecoderOverride, SynthesisModel};
use magniflow::nofa::{fit_lognormal_mle, generate_dataset, load_dataset, sample_seed, simulate_photon_noise};
use magniflow::substrate::{read_checkpoint, write_checkpoint, Checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::{state, usage};

pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSS_CSV: &str = "loss.csv";
pub const CONFIG_TXT: &str = "config.txt";

pub fn gen_data(cfg: &RunConfig, count: usize, out: &Path) -> Result<()> {
    let nofa = cfg.nofa()?;
    let manifest = generate_dataset(count, &nofa, cfg.seed(), out)?;
    let bins = 10;
    let mut hist = vec![0usize; bins];
    let span = (nofa.alpha_max - nofa.alpha_min).max(f32::MIN_POSITIVE);
    for s in &manifest.samples {
        let b = (((s.alpha - nofa.alpha_min) / span) * bins as f32) as usize;
        hist[b.min(bins - 1)] += 1;
    }
    let cov: Vec<f64> = manifest.samples.iter().map(|s| s.coverage).collect();
    let (lo, hi) = cov.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    println!("wrote {count} samples to {}", out.display());
    println!("alpha histogram ({} bins over [{}, {}]): {hist:?}", bins, nofa.alpha_min, nofa.alpha_max);
    if !cov.is_empty() {
        println!("mask coverage: mean {:.4} min {lo:.4} max {hi:.4}", cov.iter().sum::<f64>() / cov.len() as f64);
    }
    Ok(())
}

fn read_frames(dir: &Path) -> Result<Vec<ImageBuffer>> {
    let paths = list_frames(dir).map_err(|e| usage(format!("cannot list frames in {}: {e}", dir.display())))?;
    let frames = paths.iter().map(read_ppm).collect::<magniflow::Result<Vec<_>>>()?;
    if let Some(first) = frames.first() {
        for (p, f) in paths.iter().zip(&frames) {
            if f.dims() != first.dims() {
                return Err(usage(format!("{} is {:?}, expected {:?} like the first frame", p.display(), f.dims(), first.dims())));
            }
        }
    }
    Ok(frames)
}

fn fit_positive(magnitudes: Vec<f64>) -> Result<(f64, f64)> {
    let positive: Vec<f64> = magnitudes.into_iter().filter(|&m| m > 0.0).collect();
    if positive.len() < 2 {
        return Err(magniflow::Error::DegenerateFit("no non-zero flow magnitudes to fit".into()).into());
    }
    Ok(fit_lognormal_mle(&positive)?)
}

/// Photon noise on every frame, flow clean -> noisy, log-normal fit of the
/// pooled non-zero magnitudes.
pub fn fit_noise_frames(cfg: &RunConfig, dir: &Path, strength: f32) -> Result<(f64, f64)> {
    let frames = read_frames(dir)?;
    if frames.len() < 2 {
        return Err(usage(format!("{} holds {} frames; at least 2 are needed", dir.display(), frames.len())));
    }
    let mut pooled = Vec::new();
    for (i, clean) in frames.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed(), i as u64));
        let noisy = simulate_photon_noise(clean, strength, &mut rng)?;
        let flow = estimate_flow_pyrlk(clean, &noisy, cfg.usize("lk_levels"), cfg.usize("lk_window"))?;
        pooled.extend(flow.magnitudes().into_iter().map(f64::from));
    }
    fit_positive(pooled)
}

/// Fit to pre-computed noise-only flows.
pub fn fit_noise_flows(dir: &Path) -> Result<(f64, f64)> {
    let paths = list_with_extension(dir, "flo")?;
    if paths.is_empty() {
        return Err(usage(format!("no .flo files in {}", dir.display())));
    }
    let mut pooled = Vec::new();
    for p in &paths {
        pooled.extend(read_flo(p)?.magnitudes().into_iter().map(f64::from));
    }
    fit_positive(pooled)
}

/// A training run directory: checkpoint, loss log and the effective config.
struct Run {
    dir: PathBuf,
    rows: Vec<String>,
    header: &'static str,
}

impl Run {
    /// Opens `dir` for a fresh run, or for resumption when `resume` is set,
    /// returning the checkpoint to continue from.
    fn open(dir: &Path, resume: bool, header: &'static str, cfg: &RunConfig) -> Result<(Self, Option<Checkpoint>)> {
        let ckpt_path = dir.join(CHECKPOINT);
        let mut run = Self { dir: dir.to_path_buf(), rows: Vec::new(), header };
        let ckpt = if resume {
            if !ckpt_path.exists() {
                return Err(state(format!("nothing to resume: {} does not exist", ckpt_path.display())));
            }
            let ckpt = read_checkpoint(&ckpt_path).map_err(|e| state(format!("{}: {e}", ckpt_path.display())))?;
            let log = fs::read_to_string(dir.join(LOSS_CSV)).unwrap_or_default();
            let step = ckpt.header.step;
            run.rows = log
                .lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
                .map(str::to_string)
                .collect();
            Some(ckpt)
        } else {
            if ckpt_path.exists() {
                return Err(usage(format!("{} already holds a run; pass --resume or choose a fresh directory", dir.display())));
            }
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            None
        };
        fs::write(dir.join(CONFIG_TXT), cfg.to_text())?;
        Ok((run, ckpt))
    }

    fn save(&self, ckpt: &Checkpoint) -> Result<()> {
        write_checkpoint(self.dir.join(CHECKPOINT), ckpt)?;
        let mut csv = format!("{}\n", self.header);
        for r in &self.rows {
            csv.push_str(r);
            csv.push('\n');
        }
        fs::write(self.dir.join(LOSS_CSV), csv)?;
        Ok(())
    }
}

/// Splits `start..total` at multiples of `every`.
fn chunks(start: u64, total: u64, every: u64) -> impl Iterator<Item = (u64, u64)> {
    let every = every.max(1);
    let mut s = start;
    std::iter::from_fn(move || {
        (s < total).then(|| {
            let e = ((s / every + 1) * every).min(total);
            let out = (s, e);
            s = e;
            out
        })
    })
}

pub fn train_dmm(cfg: &RunConfig, data: Option<&Path>, out: &Path, resume: bool) -> Result<()> {
    let config = cfg.magnifier()?;
    let schedule = cfg.schedule()?;
    let corpus = match data {
        Some(dir) => {
            let (_, pairs) = load_dataset(dir).map_err(|e| usage(format!("cannot load corpus {}: {e}", dir.display())))?;
            pairs.into_iter().map(|(cond, target, alpha)| DmmExample { cond, target, alpha }).collect()
        }
        None => Vec::new(),
    };
    let training = TrainingData { corpus, synthetic: cfg.nofa()?, real: cfg.bool("real_pairs").then(|| cfg.real_pairs()), seed: cfg.seed() };

    let (mut run, ckpt) = Run::open(out, resume, "step,loss,source", cfg)?;
    let mut model = match &ckpt {
        Some(c) => {
            let m = MagnifierModel::<f32>::from_checkpoint(c).map_err(|e| state(e.to_string()))?;
            if m.config != config {
                return Err(state(format!("checkpoint was trained with {:?}, but the configuration asks for {config:?}", m.config)));
            }
            m
        }
        None => MagnifierModel::new(config)?,
    };
    let total = cfg.u64("steps");
    let batch = cfg.usize("batch");
    for (start, end) in chunks(model.params.step(), total, cfg.u64("checkpoint_every")) {
        for step in start..end {
            let opt = cfg.optimizer(step, total);
            magniflow::dmm::train_dmm(&mut model, &training, &schedule, &opt, step, step + 1, batch, |k, loss, source| {
                run.rows.push(format!("{k},{loss},{}", source.as_str()))
            })?;
        }
        run.save(&model.to_checkpoint(cfg.seed()))?;
        log::info!("dmm step {end}/{total}: loss {}", run.rows.last().map_or("-", |r| r.split(',').nth(1).unwrap_or("-")));
    }
    if model.params.step() == 0 {
        run.save(&model.to_checkpoint(cfg.seed()))?;
    }
    Ok(())
}

pub fn train_fvs(cfg: &RunConfig, out: &Path, resume: bool) -> Result<()> {
    let config = cfg.synthesis();
    let (mut run, ckpt) = Run::open(out, resume, "step,loss,l1,gram", cfg)?;
    let mut model = match &ckpt {
        Some(c) => {
            let m = SynthesisModel::<f32>::from_checkpoint(c).map_err(|e| state(e.to_string()))?;
            if m.config != config {
                return Err(state(format!("checkpoint was trained with {:?}, but the configuration asks for {config:?}", m.config)));
            }
            m
        }
        None => SynthesisModel::new(config)?,
    };
    let total = cfg.u64("steps");
    let size = cfg.usize("fvs_size");
    for (start, end) in chunks(model.params.step(), total, cfg.u64("checkpoint_every")) {
        for step in start..end {
            let opt = cfg.optimizer(step, total);
            fit_synthesis(&mut model, (size, size), cfg.f32("fvs_max_shift"), cfg.seed(), cfg.loss_weights(), &opt, step, step + 1, cfg.usize("batch"), |k, l| {
                run.rows.push(format!("{k},{},{},{}", l.total, l.l1, l.gram))
            })?;
        }
        run.save(&model.to_checkpoint(cfg.seed()))?;
        log::info!("fvs step {end}/{total}");
    }
    if model.params.step() == 0 {
        run.save(&model.to_checkpoint(cfg.seed()))?;
    }
    Ok(())
}

/// Edge-replicating pad so both extents are multiples of `m`.
pub fn pad_flow(flow: &FlowField, m: usize) -> FlowField {
    let (w, h) = flow.dims();
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    FlowField::from_fn(pw, ph, |x, y| flow.get(x.min(w - 1), y.min(h - 1))).expect("finite input")
}

pub fn crop_flow(flow: &FlowField, w: usize, h: usize) -> FlowField {
    FlowField::from_fn(w, h, |x, y| flow.get(x, y)).expect("finite input")
}

pub struct MagnifyOptions {
    pub frames: PathBuf,
    pub alpha: f64,
    pub dynamic: bool,
    pub dmm: PathBuf,
    pub fvs: PathBuf,
    pub flows: Option<PathBuf>,
    pub out: PathBuf,
}

fn load(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(state(format!("checkpoint {} does not exist", path.display())));
    }
    read_checkpoint(path).map_err(|e| state(format!("{}: {e}", path.display())))
}

/// Writes `frame_NNNNNN.ppm` plus colour renders `tau_*.ppm` / `taum_*.ppm`
/// and the magnified flow `taum_*.flo` for every frame pair.
pub fn magnify(cfg: &RunConfig, opts: &MagnifyOptions) -> Result<()> {
    if !(opts.alpha >= 0.0 && opts.alpha.is_finite()) {
        return Err(usage(format!("alpha must be a finite value >= 0, got {}", opts.alpha)));
    }
    if opts.out.exists() && fs::read_dir(&opts.out)?.next().is_some() {
        return Err(usage(format!("refusing to write into non-empty {}", opts.out.display())));
    }
    let dmm = MagnifierModel::<f32>::from_checkpoint(&load(&opts.dmm)?).map_err(|e| state(e.to_string()))?;
    let fvs = SynthesisModel::<f32>::from_checkpoint(&load(&opts.fvs)?).map_err(|e| state(e.to_string()))?;
    let frames = read_frames(&opts.frames)?;
    if frames.len() < 2 {
        return Err(usage(format!("{} holds {} frames; at least 2 are needed", opts.frames.display(), frames.len())));
    }
    let pairs: Vec<(usize, usize)> = (1..frames.len()).map(|t| if opts.dynamic { (t - 1, t) } else { (0, t) }).collect();
    let (w, h) = frames[0].dims();

    let external = match &opts.flows {
        Some(dir) => {
            let paths = list_with_extension(dir, "flo")?;
            if paths.len() != pairs.len() {
                return Err(usage(format!("{} holds {} flows for {} frame pairs", dir.display(), paths.len(), pairs.len())));
            }
            let flows = paths.iter().map(read_flo).collect::<magniflow::Result<Vec<_>>>()?;
            if let Some(f) = flows.iter().find(|f| f.dims() != (w, h)) {
                return Err(usage(format!("flow of size {:?} does not match {w}x{h} frames", f.dims())));
            }
            Some(flows)
        }
        None => None,
    };

    let kind = cfg.str("schedule").parse()?;
    let schedule = make_schedule(dmm.config.timesteps, kind, dmm.config.f_max)?;
    let steps = cfg.usize("sample_steps").min(dmm.config.timesteps);
    fs::create_dir_all(&opts.out)?;
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let tau = match &external {
            Some(flows) => flows[i].clone(),
            None => estimate_flow_pyrlk(&frames[a], &frames[b], cfg.usize("lk_levels"), cfg.usize("lk_window"))?,
        };
        let padded = pad_flow(&tau, LATENT_FACTOR);
        let magnified = sample_magnified_flow(&dmm, &padded, opts.alpha, &schedule, steps, sample_seed(cfg.seed(), i as u64))?;
        let tau_m = crop_flow(&magnified, w, h);
        let frame = fvs.synthesize_frame(&frames[a], &tau_m, DecoderOverride::None)?;
        let name = frame_name(i + 1);
        write_ppm(opts.out.join(&name), &frame)?;
        write_ppm(opts.out.join(name.replace("frame_", "tau_")), &flow_to_color(&tau, None))?;
        write_ppm(opts.out.join(name.replace("frame_", "taum_")), &flow_to_color(&tau_m, None))?;
        write_flo(opts.out.join(name.replace("frame_", "taum_").replace(".ppm", ".flo")), &tau_m)?;
        log::info!("frame {}/{}: mean |tau| {:.4} px, mean |tau_m| {:.4} px", i + 1, pairs.len(), tau.mean_magnitude(), tau_m.mean_magnitude());
    }
    Ok(())
}

/// Frame-by-frame metrics for matched `.flo` (EPE) or `.ppm` (PSNR, SSIM)
/// files; writes `metrics.csv` and `metrics.json` into `out` when given.
pub fn evaluate(pred: &Path, reference: &Path, out: Option<&Path>) -> Result<MetricReport> {
    let listing = |dir: &Path, ext: &str| list_with_extension(dir, ext).map_err(|e| usage(format!("{}: {e}", dir.display())));
    let flows = !listing(pred, "flo")?.is_empty();
    let ext = if flows { "flo" } else { "ppm" };
    let (p, r) = (listing(pred, ext)?, listing(reference, ext)?);
    if p.is_empty() {
        return Err(usage(format!("no .flo or .ppm files in {}", pred.display())));
    }
    if p.len() != r.len() {
        return Err(usage(format!("{} predicted vs {} reference .{ext} files", p.len(), r.len())));
    }
    let mut report = MetricReport::default();
    let mut csv = String::from(if flows { "frame,epe\n" } else { "frame,psnr,ssim\n" });
    for (i, (a, b)) in p.iter().zip(&r).enumerate() {
        if flows {
            let epe = flow_metrics(&read_flo(a)?, &read_flo(b)?).map_err(|e| usage(e.to_string()))?;
            report.push_flow(epe);
            writeln!(csv, "{},{epe}", i + 1)?;
        } else {
            let (psnr, ssim) = image_metrics(&read_ppm(a)?, &read_ppm(b)?).map_err(|e| usage(e.to_string()))?;
            report.push_image(psnr, ssim);
            writeln!(csv, "{},{psnr},{ssim}", i + 1)?;
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), csv)?;
        fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    Ok(report)
}

pub fn summary(report: &MetricReport) -> String {
    let mut s = String::new();
    if let Some(epe) = report.epe_mean {
        let _ = writeln!(s, "frames: {}\nmean EPE: {epe:.6} px", report.epe_per_frame.len());
    }
    if let (Some(p), Some(q)) = (report.psnr, report.ssim) {
        let _ = writeln!(s, "frames: {}\nmean PSNR: {p:.3} dB\nmean SSIM: {q:.6}", report.psnr_per_frame.len());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_covers_the_range_at_multiples() {
        let c: Vec<_> = chunks(3, 10, 4).collect();
        assert_eq!(c, vec![(3, 4), (4, 8), (8, 10)]);
        assert_eq!(chunks(10, 10, 4).count(), 0);
    }

    #[test]
    fn padding_replicates_edges_and_crops_back() {
        let f = FlowField::from_fn(5, 3, |x, y| (x as f32, y as f32)).unwrap();
        let p = pad_flow(&f, 8);
        assert_eq!(p.dims(), (8, 8));
        assert_eq!(p.get(7, 7), (4.0, 2.0));
        assert_eq!(crop_flow(&p, 5, 3), f);
    }
}
