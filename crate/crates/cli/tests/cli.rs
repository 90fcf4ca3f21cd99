//! Runs the `magniflow` binary end to end on small inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use magniflow::dmm::{MagnifierModel, X0Predictor};
use magniflow::flowcore::metrics::{flow_metrics, image_metrics};
use magniflow::flowcore::ppm::write_video;
use magniflow::flowcore::{read_flo, read_ppm, write_flo, FlowField, ImageBuffer};
use magniflow::nofa::{generate_sample, render_synthetic_video, sample_seed, NoiseModel, SceneConfig};
use magniflow::substrate::{encode_checkpoint, read_checkpoint};
use magniflow_cli::RunConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use tempfile::TempDir;

const SMALL: [&str; 10] = ["--widths", "8,8,16", "--emb_dim", "16", "--timesteps", "20", "--sample_steps", "5", "--fvs_features", "4"];

fn magniflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magniflow")).args(args).env_remove("MAGNIFLOW_SEED").env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = magniflow(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = magniflow(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect();
    v.sort();
    v
}

fn with_ext(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext)).count()
}

#[test]
fn gen_data_writes_pairs_manifest_and_summary() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stdout = ok(&["gen-data", "--count", "4", "--seed", "7", "--out", s(&a)]);
    assert!(stdout.contains("alpha histogram") && stdout.contains("mask coverage"), "{stdout}");
    assert_eq!(with_ext(&a, "flo"), 8);
    assert!(a.join("manifest.json").exists());
    ok(&["gen-data", "--count", "4", "--seed", "7", "--out", s(&b)]);
    assert_eq!(listing(&a), listing(&b));
}

#[test]
fn seed_environment_variable_overrides_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "seed = 1\n").unwrap();
    let run = |dir: &str, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_magniflow"));
        cmd.args(["gen-data", "--count", "2", "--config", s(&cfg), "--out", s(&tmp.path().join(dir))]);
        match env {
            Some(v) => cmd.env("MAGNIFLOW_SEED", v),
            None => cmd.env_remove("MAGNIFLOW_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        listing(&tmp.path().join(dir))
    };
    let plain = run("plain", None);
    let env_same = run("same", Some("1"));
    let env_other = run("other", Some("2"));
    assert_eq!(plain, env_same);
    assert_ne!(plain, env_other);
}

#[test]
fn unknown_or_invalid_keys_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "regions = 5\nmistery_key = 3\n").unwrap();
    let (c, err) = code(&["gen-data", "--count", "1", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(c, 2);
    assert!(err.contains("mistery_key"), "{err}");
    let (c, err) = code(&["gen-data", "--count", "1", "--m_max", "lots", "--out", s(tmp.path())]);
    assert_eq!(c, 2);
    assert!(err.contains("m_max"), "{err}");
}

#[test]
fn default_corpus_coverage_stays_in_bounds() {
    let cfg = RunConfig::default().nofa().unwrap();
    for i in 0..10_000 {
        let c = generate_sample(&cfg, sample_seed(31, i)).unwrap().coverage();
        assert!(c > 0.0 && c <= 0.5, "sample {i}: coverage {c}");
    }
}

fn parse_fit(stdout: &str) -> (f64, f64) {
    let get = |k: &str| stdout.lines().find_map(|l| l.strip_prefix(k)).unwrap().trim().parse::<f64>().unwrap();
    (get("mu = "), get("sigma = "))
}

#[test]
fn noise_fit_recovers_injected_lognormal_magnitudes() {
    let tmp = TempDir::new().unwrap();
    let model = NoiseModel::default();
    let dist = LogNormal::new(model.mu, model.sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..4 {
        let flow = FlowField::from_fn(64, 64, |x, y| {
            let m = dist.sample(&mut rng) as f32;
            let theta = (x * 7 + y * 13 + i) as f32 * 0.37;
            (m * theta.cos(), m * theta.sin())
        })
        .unwrap();
        write_flo(tmp.path().join(format!("noise_{i}.flo")), &flow).unwrap();
    }
    let (mu, sigma) = parse_fit(&ok(&["fit-noise", "--flows", s(tmp.path())]));
    assert!((mu - model.mu).abs() <= 0.05 && (sigma - model.sigma).abs() <= 0.05, "mu {mu}, sigma {sigma}");
}

fn write_frames(dir: &Path, amplitude: f32, frames: usize, size: (usize, usize)) -> Vec<ImageBuffer> {
    let video = render_synthetic_video(&SceneConfig { width: size.0, height: size.1, frames, amplitude, ..SceneConfig::default() }).unwrap();
    write_video(dir, &video.frames).unwrap();
    video.frames
}

#[test]
fn noise_fit_from_frames_is_deterministic_and_rejects_zero_strength() {
    let tmp = TempDir::new().unwrap();
    write_frames(tmp.path(), 0.0, 3, (48, 48));
    let a = ok(&["fit-noise", "--frames", s(tmp.path()), "--strength", "0.02"]);
    let b = ok(&["fit-noise", "--frames", s(tmp.path()), "--strength", "0.02"]);
    assert_eq!(a, b);
    let (mu, sigma) = parse_fit(&a);
    assert!(mu.is_finite() && sigma > 0.0);
    let (c, err) = code(&["fit-noise", "--frames", s(tmp.path()), "--strength", "0"]);
    assert_eq!(c, 2, "{err}");
    assert!(err.contains("degenerate"), "{err}");
}

fn train(which: &str, out: &Path, steps: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", which, "--out", s(out), "--steps", steps, "--checkpoint_every", "3", "--fvs_size", "32", "--fvs_widths", "4,4,8"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    magniflow(&args)
}

#[test]
fn dmm_training_is_reproducible_and_resumes_exactly() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["gen-data", "--count", "6", "--out", s(&data)]);
    let [a, b, c] = ["a", "b", "c"].map(|n| tmp.path().join(n));
    for dir in [&a, &b] {
        assert!(train("dmm", dir, "10", &["--data", s(&data)]).status.success());
    }
    let csv = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(csv.starts_with("step,loss,source\n"));
    assert!(csv.contains(",synthetic") && csv.contains(",real"), "alternating sources:\n{csv}");
    assert_eq!(listing(&a), listing(&b));

    assert!(train("dmm", &c, "4", &["--data", s(&data), "--lr_schedule", "constant"]).status.success());
    let out = train("dmm", &c, "10", &["--data", s(&data), "--lr_schedule", "constant", "--resume"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let d = tmp.path().join("d");
    assert!(train("dmm", &d, "10", &["--data", s(&data), "--lr_schedule", "constant"]).status.success());
    assert_eq!(fs::read(c.join("model.ckpt")).unwrap(), fs::read(d.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(c.join("loss.csv")).unwrap(), fs::read(d.join("loss.csv")).unwrap());

    // Reloading the checkpoint gives back the same weights and predictions.
    let ckpt = read_checkpoint(a.join("model.ckpt")).unwrap();
    let model = MagnifierModel::<f32>::from_checkpoint(&ckpt).unwrap();
    assert_eq!(encode_checkpoint(&model.to_checkpoint(ckpt.header.master_seed)).unwrap(), fs::read(a.join("model.ckpt")).unwrap());
    let cond = FlowField::constant(16, 16, 0.2, -0.1);
    let predictor = magniflow::dmm::ConditionedMagnifier::new(&model, &[&cond], &[20.0]).unwrap();
    let x = magniflow::dmm::flows_to_array::<f32>(&[&cond], 1.0).unwrap();
    let again = MagnifierModel::<f32>::from_checkpoint(&ckpt).unwrap();
    let predictor2 = magniflow::dmm::ConditionedMagnifier::new(&again, &[&cond], &[20.0]).unwrap();
    assert_eq!(predictor.predict_x0(&x, 7).unwrap(), predictor2.predict_x0(&x, 7).unwrap());
}

#[test]
fn resuming_with_a_different_architecture_is_a_state_error() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    assert!(train("dmm", &run, "2", &[]).status.success());
    let out = train("dmm", &run, "4", &["--resume", "--emb_dim", "8"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = train("dmm", &tmp.path().join("missing"), "4", &["--resume"]);
    assert_eq!(out.status.code(), Some(3));
    // A fresh run refuses to clobber an existing one.
    assert_eq!(train("dmm", &run, "2", &[]).status.code(), Some(2));
}

#[test]
fn fvs_training_logs_losses_and_reloads() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("fvs");
    let out = train("fvs", &run, "4", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(csv.starts_with("step,loss,l1,gram\n"));
    assert_eq!(csv.lines().count(), 5);
    let ckpt = read_checkpoint(run.join("model.ckpt")).unwrap();
    assert_eq!(ckpt.header.step, 4);
    magniflow::fvs::SynthesisModel::<f32>::from_checkpoint(&ckpt).unwrap();
}

struct Trained {
    _tmp: TempDir,
    dmm: PathBuf,
    fvs: PathBuf,
}

fn trained() -> Trained {
    let tmp = TempDir::new().unwrap();
    let (d, f) = (tmp.path().join("dmm"), tmp.path().join("fvs"));
    assert!(train("dmm", &d, "2", &[]).status.success());
    assert!(train("fvs", &f, "2", &[]).status.success());
    Trained { dmm: d.join("model.ckpt"), fvs: f.join("model.ckpt"), _tmp: tmp }
}

fn magnify_args<'a>(t: &'a Trained, frames: &'a Path, out: &'a Path, mode: &'a str) -> Vec<&'a str> {
    let mut v = vec!["magnify", "--frames", s(frames), "--alpha", "5", "--mode", mode, "--dmm", s(&t.dmm), "--fvs", s(&t.fvs), "--out", s(out)];
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn magnify_writes_one_output_per_frame_pair_in_both_modes() {
    let t = trained();
    let tmp = TempDir::new().unwrap();
    let frames = tmp.path().join("in");
    write_frames(&frames, 0.5, 4, (36, 20));
    let before = listing(&frames);
    for mode in ["static", "dynamic"] {
        let out = tmp.path().join(mode);
        ok(&magnify_args(&t, &frames, &out, mode));
        let names: Vec<String> = listing(&out).into_iter().map(|(n, _)| n).collect();
        for prefix in ["frame_", "tau_", "taum_"] {
            assert_eq!(names.iter().filter(|n| n.starts_with(prefix) && n.ends_with(".ppm")).count(), 3, "{mode}: {names:?}");
        }
        assert_eq!(read_ppm(out.join("frame_000001.ppm")).unwrap().dims(), (36, 20));
    }
    assert_eq!(listing(&frames), before, "inputs are never modified");
}

#[test]
fn magnify_accepts_external_flows() {
    let t = trained();
    let tmp = TempDir::new().unwrap();
    let frames = tmp.path().join("in");
    write_frames(&frames, 0.5, 3, (24, 24));
    let flows = tmp.path().join("flows");
    fs::create_dir_all(&flows).unwrap();
    for i in 0..2 {
        write_flo(flows.join(format!("f{i}.flo")), &FlowField::constant(24, 24, 0.1, 0.0)).unwrap();
    }
    let out = tmp.path().join("out");
    let mut args = magnify_args(&t, &frames, &out, "static");
    args.extend(["--flows", s(&flows)]);
    ok(&args);
    assert_eq!(with_ext(&out, "flo"), 2);
    fs::remove_file(flows.join("f1.flo")).unwrap();
    let out2 = tmp.path().join("out2");
    let mut args = magnify_args(&t, &frames, &out2, "static");
    args.extend(["--flows", s(&flows)]);
    assert_eq!(code(&args).0, 2);
}

#[test]
fn magnify_error_paths_use_the_documented_exit_codes() {
    let t = trained();
    let tmp = TempDir::new().unwrap();
    let frames = tmp.path().join("in");
    write_frames(&frames, 0.5, 3, (24, 24));

    let missing = Trained { dmm: tmp.path().join("nope.ckpt"), fvs: t.fvs.clone(), _tmp: TempDir::new().unwrap() };
    assert_eq!(code(&magnify_args(&missing, &frames, &tmp.path().join("o1"), "static")).0, 3);

    let busy = tmp.path().join("busy");
    fs::create_dir_all(&busy).unwrap();
    fs::write(busy.join("keep.txt"), "x").unwrap();
    assert_eq!(code(&magnify_args(&t, &frames, &busy, "static")).0, 2);
    assert_eq!(fs::read_to_string(busy.join("keep.txt")).unwrap(), "x");

    let odd = tmp.path().join("odd");
    write_frames(&odd, 0.5, 2, (24, 24));
    magniflow::flowcore::write_ppm(odd.join("frame_000003.ppm"), &ImageBuffer::filled(20, 24, 3, 0.5).unwrap()).unwrap();
    assert_eq!(code(&magnify_args(&t, &odd, &tmp.path().join("o2"), "static")).0, 2);
}

#[test]
fn evaluate_reports_match_direct_metric_calls() {
    let tmp = TempDir::new().unwrap();
    let (gt, pred) = (tmp.path().join("gt"), tmp.path().join("pred"));
    fs::create_dir_all(&gt).unwrap();
    fs::create_dir_all(&pred).unwrap();
    for i in 0..3 {
        let f = generate_sample(&Default::default(), i).unwrap().target;
        write_flo(gt.join(format!("f{i}.flo")), &f).unwrap();
        let shifted = FlowField::from_fn(f.width(), f.height(), |x, y| (f.get(x, y).0 + 1.0, f.get(x, y).1)).unwrap();
        write_flo(pred.join(format!("f{i}.flo")), &shifted).unwrap();
    }
    let stdout = ok(&["evaluate", "--pred", s(&pred), "--ref", s(&gt), "--out", s(&tmp.path().join("rep"))]);
    assert!(stdout.contains("mean EPE: 1.000000"), "{stdout}");
    let report: magniflow::MetricReport = serde_json::from_slice(&fs::read(tmp.path().join("rep/metrics.json")).unwrap()).unwrap();
    for (i, e) in report.epe_per_frame.iter().enumerate() {
        let direct = flow_metrics(&read_flo(pred.join(format!("f{i}.flo"))).unwrap(), &read_flo(gt.join(format!("f{i}.flo"))).unwrap()).unwrap();
        assert_eq!(*e, direct);
        assert!((e - 1.0).abs() < 1e-6);
    }
    assert!(fs::read_to_string(tmp.path().join("rep/metrics.csv")).unwrap().starts_with("frame,epe\n"));
    let self_flow = ok(&["evaluate", "--pred", s(&gt), "--ref", s(&gt)]);
    assert!(self_flow.contains("mean EPE: 0.000000"), "{self_flow}");

    let (a, b) = (tmp.path().join("ia"), tmp.path().join("ib"));
    write_frames(&a, 1.0, 3, (40, 32));
    write_frames(&b, 1.5, 3, (40, 32));
    let stdout = ok(&["evaluate", "--pred", s(&a), "--ref", s(&a)]);
    assert!(stdout.contains("mean PSNR: 99.000") && stdout.contains("mean SSIM: 1.000000"), "{stdout}");
    ok(&["evaluate", "--pred", s(&b), "--ref", s(&a), "--out", s(&tmp.path().join("rep2"))]);
    let report: magniflow::MetricReport = serde_json::from_slice(&fs::read(tmp.path().join("rep2/metrics.json")).unwrap()).unwrap();
    let other = read_ppm(b.join("frame_000002.ppm")).unwrap();
    let reference = read_ppm(a.join("frame_000002.ppm")).unwrap();
    assert_eq!((report.psnr_per_frame[1], report.ssim_per_frame[1]), image_metrics(&other, &reference).unwrap());

    fs::remove_file(b.join("frame_000003.ppm")).unwrap();
    assert_eq!(code(&["evaluate", "--pred", s(&b), "--ref", s(&a)]).0, 2);
}
