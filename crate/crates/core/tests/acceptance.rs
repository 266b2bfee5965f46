//! Acceptance target: one PASS/FAIL line per criterion, exit status 1 if
//! any fails. Runs the full toy trainings, so expect roughly half an hour
//! on one core.

mod common;

use std::time::Instant;

use common::Check;
use faceanon::evaluation::report::{REFERENCE_AP_TABLE, REFERENCE_NOTE};
use faceanon::generator::Phase;
use faceanon::nn::EmaConfig;
use faceanon::training::{Schedule, ScheduleConfig};

const GRAD_RUNTIME_SECS: f64 = 120.0;
const GROWTH_TOLERANCE: f32 = 1e-5;
const PRIVACY_PAIRS: usize = 100;
const FID_REDUCTION: f64 = 0.5;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const BASELINE_FIXTURES: usize = 50;
const BASELINE_TOLERANCE: f64 = 1e-5;
const CLOSED_FORM_TOLERANCE: f64 = 1e-8;
const SELF_FID_SAMPLES: usize = 50_000;
const SELF_FID_TOLERANCE: f64 = 1e-3;
const AP_MAX_DETECTIONS: usize = 20;
const MATCHING_INSTANCES: usize = 1000;
const EMA_BETA_256: f64 = 0.982412;
const EMA_BETA_TOLERANCE: f64 = 1e-6;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Check<String> {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for (name, f, inputs) in common::op_cases() {
        let err = common::gradcheck(&*f, &inputs);
        ensure(err < common::GRAD_TOLERANCE, || format!("op {name}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }
    for (name, err) in common::network_gradchecks() {
        ensure(err < common::GRAD_TOLERANCE, || format!("{name}: relative error {err:.2e}"))?;
        worst = worst.max(err);
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < GRAD_RUNTIME_SECS, || format!("took {secs:.0}s"))?;
    Ok(format!("worst relative error {worst:.2e}, {secs:.1}s"))
}

fn privacy() -> Check<String> {
    let bad = common::privacy_violations(PRIVACY_PAIRS, 11);
    ensure(bad == 0, || format!("{bad} of {PRIVACY_PAIRS} pairs differ"))?;
    Ok(format!("{PRIVACY_PAIRS} pairs bit-identical"))
}

fn growth() -> Check<String> {
    let mut worst = (0.0f32, 0.0f32);
    for seed in [1, 2] {
        let g = common::growth_invariants(seed);
        ensure(g.endpoint_alpha0_bits, || format!("seed {seed}: alpha = 0 differs from the old path"))?;
        ensure(g.endpoint_alpha1_bits, || format!("seed {seed}: alpha = 1 differs from the new path"))?;
        ensure(g.linearity <= GROWTH_TOLERANCE, || format!("seed {seed}: linearity error {:.2e}", g.linearity))?;
        ensure(g.grow_preserves <= GROWTH_TOLERANCE, || {
            format!("seed {seed}: growing moved the output by {:.2e}", g.grow_preserves)
        })?;
        worst = (worst.0.max(g.linearity), worst.1.max(g.grow_preserves));
    }
    Ok(format!("endpoints bit-exact, linearity {:.1e}, grow {:.1e}", worst.0, worst.1))
}

fn toy_training(run: &Check<common::ToyRun>) -> Check<String> {
    let run = run.as_ref().map_err(Clone::clone)?;
    ensure(run.nonfinite_losses == 0, || "non-finite loss".into())?;
    ensure(run.trained_fid <= FID_REDUCTION * run.untrained_fid, || {
        format!("FID {:.4} -> {:.4}", run.untrained_fid, run.trained_fid)
    })?;
    ensure(run.resume_bit_exact == Some(true), || "resumed run diverged".into())?;
    Ok(format!(
        "{} steps, FID {:.4} -> {:.4} ({:.0}%), resume bit-exact, {:.0}s",
        run.steps,
        run.untrained_fid,
        run.trained_fid,
        100.0 * run.trained_fid / run.untrained_fid,
        run.seconds
    ))
}

fn pose_ablation(first_pose: &Check<common::ToyRun>) -> Check<String> {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in ABLATION_SEEDS {
        let with = match (seed, first_pose) {
            (0, Ok(r)) => r.trained_fid,
            _ => common::toy_run(seed, true, false)?.trained_fid,
        };
        let without = common::toy_run(seed, false, false)?.trained_fid;
        if with < without {
            wins += 1;
        }
        detail.push(format!("seed {seed}: {with:.3} vs {without:.3}"));
    }
    let detail = detail.join(", ");
    ensure(2 * wins > ABLATION_SEEDS.len(), || format!("pose better in {wins}/3 ({detail})"))?;
    Ok(format!("pose better in {wins}/3 ({detail})"))
}

fn baselines() -> Check<String> {
    let devs = common::anonymizer_deviations(BASELINE_FIXTURES, 3)?;
    for (name, d) in &devs {
        ensure(*d < BASELINE_TOLERANCE, || format!("{name}: deviation {d:.2e}"))?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ran = common::cli_methods_runnable(dir.path())?;
    let worst = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    Ok(format!("{BASELINE_FIXTURES} fixtures within {worst:.1e}; CLI ran {}", ran.join(", ")))
}

fn fid_engine() -> Check<String> {
    let closed = common::fid_closed_form_error(200, 1);
    ensure(closed < CLOSED_FORM_TOLERANCE, || format!("closed form off by {closed:.2e}"))?;
    let (asym, ident) = common::fid_symmetry_identity(50, 2);
    ensure(asym < 1e-9, || format!("asymmetry {asym:.2e}"))?;
    ensure(ident < 1e-9, || format!("d(a, a) = {ident:.2e}"))?;
    let own = common::self_fid(SELF_FID_SAMPLES)?;
    ensure(own < SELF_FID_TOLERANCE, || format!("self-FID {own:.2e}"))?;
    Ok(format!("closed form {closed:.1e}, asymmetry {asym:.1e}, d(a,a) {ident:.1e}, 50k self-FID {own:.1e}"))
}

fn ap_engine() -> Check<String> {
    let dev = common::ap_oracle_deviation(2000, AP_MAX_DETECTIONS, 5)?;
    ensure(dev < 1e-12, || format!("oracle gap {dev:.2e}"))?;
    let moved = common::ap_rank_variance(500, 6);
    ensure(moved == 0, || format!("{moved} fixtures changed under monotone maps"))?;
    let bad = common::ap_identity_ratio_failures(500, 8)?;
    ensure(bad == 0, || format!("{bad} splits with ratio != 1"))?;
    ensure(REFERENCE_AP_TABLE.len() == 7 && REFERENCE_NOTE.contains("not reproducible"), || {
        "reference table missing or unlabeled".into()
    })?;
    Ok(format!("oracle gap {dev:.1e}, rank-invariant, identity ratio 1.0"))
}

fn schedule() -> Check<String> {
    let s = Schedule::new(&ScheduleConfig::full_scale(), 8, 128).map_err(|e| e.to_string())?;
    let got: Vec<(usize, Phase, usize)> = s.phases().iter().map(|p| (p.resolution, p.phase, p.batch_size)).collect();
    let mut want = vec![(8, Phase::Stabilization, 256)];
    for (r, b) in [(16, 256), (32, 128), (64, 72), (128, 48)] {
        want.push((r, Phase::Transition, b));
        want.push((r, Phase::Stabilization, b));
    }
    ensure(got == want, || format!("phases {got:?}"))?;
    ensure(s.images_per_phase() == 1_200_000, || format!("{} images per phase", s.images_per_phase()))?;
    let beta = EmaConfig::with_half_life(256, 1e4).map_err(|e| e.to_string())?.beta();
    ensure((beta - EMA_BETA_256).abs() <= EMA_BETA_TOLERANCE, || format!("beta(256) = {beta}"))?;
    Ok(format!("9 phases, batches 256/256/128/72/48, beta(256) = {beta:.6}"))
}

fn matching() -> Check<String> {
    let bad = common::matching_mismatches(MATCHING_INSTANCES, 21);
    ensure(bad == 0, || format!("{bad} of {MATCHING_INSTANCES} instances differ"))?;
    Ok(format!("{MATCHING_INSTANCES} instances agree"))
}

fn main() {
    // An optional argument restricts the run to criteria whose name contains it.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut failed = 0;
    let mut report = |name: &str, result: &dyn Fn() -> Check<String>| {
        if !wanted(name) {
            return;
        }
        match result() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    };
    report("gradient suite", &gradients);
    report("privacy invariant", &privacy);
    report("progressive growing", &growth);
    report("baseline anonymizers", &baselines);
    report("FID engine", &fid_engine);
    report("AP engine", &ap_engine);
    report("schedule replay", &schedule);
    report("matching", &matching);
    // The slow ones last.
    let first = if wanted("toy training") || wanted("pose ablation") {
        common::toy_run(0, true, true)
    } else {
        Err("not run".into())
    };
    report("toy training", &|| toy_training(&first));
    report("pose ablation", &|| pose_ablation(&first));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
