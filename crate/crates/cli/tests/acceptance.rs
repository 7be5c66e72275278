//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs without the libtest harness so every line is printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satnc::channel::{derive_params, ErasureChannel, GilbertChannel};
use satnc::coding::{CodedPacket, Decoder, InfoSource, PacketKind, PatternSource, Redundancy};
use satnc::derive_seed;
use satnc::galois::{CoeffVector, GaloisField};
use satnc::multihop::{e2e_redundancy_count, run_tandem, Strategy, TandemConfig, TandemReport};
use satnc::simulator::{run_simulation, Mode, SimConfig};
use satnc_cli::optimize::{optimize_generation_size, unimodal_within_ci};
use satnc_cli::spec::{preset, ExperimentSpec, OptimizeOptions, Preset};
use satnc_cli::sweep::{run_sweep, worker_pool, SweepOutput, SweepRow};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn clmul_reduce(a: u8, b: u8, q: u8, poly: u16) -> u8 {
    let mut acc: u16 = 0;
    for bit in 0..q {
        if b >> bit & 1 == 1 {
            acc ^= (a as u16) << bit;
        }
    }
    for bit in (q..2 * q).rev() {
        if acc >> bit & 1 == 1 {
            acc ^= poly << (bit - q);
        }
    }
    acc as u8
}

fn field_correctness() -> Outcome {
    let f = GaloisField::gf256();
    let mut pairs = 0;
    for a in 0..=255u8 {
        for b in 0..=255u8 {
            ensure(f.mul(a, b) == clmul_reduce(a, b, 8, 0x11D), || format!("{a:#x}*{b:#x}"))?;
            pairs += 1;
        }
    }
    let mut cases = 0;
    for q in [1u8, 4, 8] {
        let f = GaloisField::get(q).map_err(|e| e.to_string())?;
        let m = f.mask();
        let mut runner = TestRunner::new(Config {
            cases: 2_000,
            failure_persistence: None,
            ..Config::default()
        });
        runner
            .run(&(any::<u8>(), any::<u8>(), any::<u8>()), |(a, b, c)| {
                let (a, b, c) = (a & m, b & m, c & m);
                prop_assert_eq!(f.add(a, b), f.add(b, a));
                prop_assert_eq!(f.mul(a, b), f.mul(b, a));
                prop_assert_eq!(f.add(f.add(a, b), c), f.add(a, f.add(b, c)));
                prop_assert_eq!(f.mul(f.mul(a, b), c), f.mul(a, f.mul(b, c)));
                prop_assert_eq!(f.mul(a, f.add(b, c)), f.add(f.mul(a, b), f.mul(a, c)));
                prop_assert_eq!(f.add(a, 0), a);
                prop_assert_eq!(f.mul(a, 1), a);
                prop_assert_eq!(f.add(a, a), 0);
                if a != 0 {
                    prop_assert_eq!(f.mul(a, f.inv(a).unwrap()), 1);
                }
                Ok(())
            })
            .map_err(|e| format!("q={q}: {e}"))?;
        cases += 2_000;
    }
    Ok(format!("{pairs} products match the oracle; {cases} axiom cases over q=1,4,8"))
}

// ---------------------------------------------------------------- 2

fn rank(f: &GaloisField, rows: &[Vec<u8>]) -> usize {
    let mut m = rows.to_vec();
    let width = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for col in 0..width {
        let Some(p) = (r..m.len()).find(|&i| m[i][col] != 0) else {
            continue;
        };
        m.swap(r, p);
        let inv = f.inv(m[r][col]).unwrap();
        for v in m[r].iter_mut() {
            *v = f.mul(*v, inv);
        }
        for i in 0..m.len() {
            if i != r && m[i][col] != 0 {
                let a = m[i][col];
                for j in 0..width {
                    m[i][j] ^= f.mul(a, m[r][j]);
                }
            }
        }
        r += 1;
    }
    r
}

/// Packets recoverable in order: the longest prefix of unit vectors inside the span.
fn recoverable_prefix(f: &GaloisField, rows: &[Vec<u8>], width: usize) -> u64 {
    let base = rank(f, rows);
    (0..width)
        .take_while(|&i| {
            let mut with = rows.to_vec();
            let mut e = vec![0; width];
            e[i] = 1;
            with.push(e);
            rank(f, &with) == base
        })
        .count() as u64
}

fn schedule(f: &GaloisField, src: &PatternSource, coded: usize, rng: &mut ChaCha8Rng) -> Vec<CodedPacket> {
    let width = src.len;
    let mut out: Vec<CodedPacket> = (1..=width)
        .map(|i| CodedPacket::uncoded(i, src.payload(i), None))
        .collect();
    for _ in 0..coded {
        let a = rng.random_range(1..=width);
        let b = rng.random_range(a..=width);
        let mut coeffs: Vec<u8> = (a..=b).map(|_| rng.random::<u8>() & f.mask()).collect();
        if coeffs.iter().all(|&c| c == 0) {
            coeffs[0] = 1;
        }
        let mut payload = vec![0u8; src.payload_len];
        for (j, &c) in coeffs.iter().enumerate() {
            f.axpy(&mut payload, c, &src.payload(a + j as u64));
        }
        let pos = rng.random_range(0..=out.len());
        out.insert(
            pos,
            CodedPacket {
                coeffs: CoeffVector::new(a, coeffs),
                payload,
                generation_id: None,
                kind: PacketKind::Coded,
            },
        );
    }
    out
}

fn oracle_case(f: &'static GaloisField, src: &PatternSource, seq: &[CodedPacket], lost: u64) -> Result<(), String> {
    let width = src.len as usize;
    let mut dec = Decoder::new(f, src.payload_len);
    let mut rows = Vec::new();
    for (slot, pkt) in seq.iter().enumerate() {
        if lost >> slot & 1 == 1 {
            continue;
        }
        let mut dense = vec![0; width];
        for i in pkt.coeffs.origin()..pkt.coeffs.end() {
            dense[i as usize - 1] = pkt.coeffs.get(i);
        }
        rows.push(dense);
        dec.ingest(pkt, slot as u64 + 1).map_err(|e| e.to_string())?;
    }
    let expect = recoverable_prefix(f, &rows, width);
    ensure(dec.delivered_through() == expect, || {
        format!("q={} width={width} pattern={lost:#b}: decoder {} oracle {expect}", f.q(), dec.delivered_through())
    })?;
    for i in 1..=expect {
        ensure(dec.delivered_payload(i) == Some(src.payload(i).as_slice()), || {
            format!("payload {i} corrupted")
        })?;
    }
    Ok(())
}

fn decoder_oracle() -> Outcome {
    let f1 = GaloisField::get(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exhaustive = 0u64;
    // Every loss pattern of windows of up to 8 transmissions.
    for width in 1..=8u64 {
        let src = PatternSource { len: width, payload_len: 2, seed: width };
        for coded in 0..=(8 - width as usize) {
            for _ in 0..4 {
                let seq = schedule(f1, &src, coded, &mut rng);
                for lost in 0..1u64 << seq.len() {
                    oracle_case(f1, &src, &seq, lost)?;
                    exhaustive += 1;
                }
            }
        }
    }
    let f8 = GaloisField::gf256();
    for case in 0..10_000u64 {
        let width = rng.random_range(1..=8u64);
        let src = PatternSource { len: width, payload_len: 4, seed: case };
        let coded = rng.random_range(0..=8 - width as usize);
        let seq = schedule(f8, &src, coded, &mut rng);
        let lost = rng.random::<u64>() & ((1 << seq.len()) - 1);
        oracle_case(f8, &src, &seq, lost)?;
    }
    Ok(format!("{exhaustive} exhaustive q=1 patterns, 10000 sampled q=8 cases"))
}

// ---------------------------------------------------------------- 3

fn channel_calibration() -> Outcome {
    const SLOTS: usize = 1_000_000;
    let mut ch = GilbertChannel::new(derive_params(0.05, 8.0).map_err(|e| e.to_string())?, 3);
    let (mut lost, mut runs, mut total_run, mut run) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..SLOTS {
        if ch.step() {
            lost += 1;
            run += 1;
        } else if run > 0 {
            runs += 1;
            total_run += run;
            run = 0;
        }
    }
    let rate = lost as f64 / SLOTS as f64;
    let burst = total_run as f64 / runs as f64;
    ensure((rate - 0.05).abs() <= 0.005, || format!("loss rate {rate}"))?;
    ensure((burst - 8.0).abs() / 8.0 <= 0.02, || format!("mean burst {burst}"))?;
    Ok(format!("loss rate {rate:.5}, mean burst {burst:.4}"))
}

// ---------------------------------------------------------------- 4

fn closed_form_efficiency() -> Outcome {
    let mut parts = Vec::new();
    for (num, den) in [(111, 100), (125, 100), (143, 100)] {
        let r = Redundancy::new(num, den).unwrap();
        let cfg = SimConfig {
            redundancy: r,
            mean_burst: 1.0,
            pi_b: 0.05,
            stream_len: 100_000,
            seed: 4,
            ..SimConfig::new("sliding-window")
        };
        let eta = run_simulation(&cfg).map_err(|e| e.to_string())?.efficiency().map_err(|e| e.to_string())?;
        let target = 1.0 / (r.as_f64() * 0.95);
        ensure((eta - target).abs() <= 0.01, || format!("R={r}: eta {eta} vs {target}"))?;
        parts.push(format!("R={}: {eta:.4} vs {target:.4}", r.as_f64()));
    }
    Ok(parts.join("; "))
}

// ---------------------------------------------------------------- 5

fn reliability() -> Outcome {
    let mut runs = 0;
    for scheme in ["generation", "sliding-window"] {
        for burst in [1.0, 8.0] {
            for seed in 0..20 {
                let cfg = SimConfig {
                    mode: Mode::Reliable,
                    redundancy: Redundancy::new(5, 4).unwrap(),
                    mean_burst: burst,
                    pi_b: 0.05,
                    stream_len: 10_000,
                    seed: derive_seed(5, &[seed]),
                    ..SimConfig::new(scheme)
                };
                let m = run_simulation(&cfg).map_err(|e| format!("{scheme} E[L]={burst} seed {seed}: {e}"))?;
                ensure(
                    m.delivered_count == 10_000 && m.erased_count == 0 && m.delay_samples.len() == 10_000,
                    || format!("{scheme} E[L]={burst} seed {seed}: delivered {}", m.delivered_count),
                )?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs delivered 10000/10000"))
}

// ---------------------------------------------------------------- 6, 7, 11

/// Reduced stream for the figure sweeps; replications stay at the preset's 20.
const SWEEP_STREAM: u64 = 10_000;

fn reduced(p: Preset, workers: usize) -> ExperimentSpec {
    let mut s = preset(p);
    s.base.stream_len = SWEEP_STREAM;
    s.workers = workers;
    s
}

static FIG3: OnceLock<Result<SweepOutput, String>> = OnceLock::new();

fn fig3() -> Result<&'static SweepOutput, String> {
    FIG3.get_or_init(|| run_sweep(&reduced(Preset::Fig3, 1)).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(Clone::clone)
}

fn delay(row: &SweepRow) -> (f64, f64) {
    (
        row.summary.delay.map_or(f64::NAN, |d| d.mean),
        row.summary.delay_half_width.unwrap_or(0.0),
    )
}

/// Upper confidence bound of `a` below the lower bound of `b`.
fn significantly_less(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 + a.1 < b.0 - b.1
}

fn find<'a>(rows: &'a [SweepRow], scheme: &str, burst: f64, axis: usize) -> Option<&'a SweepRow> {
    rows.iter()
        .find(|r| r.point.scheme == scheme && r.point.mean_burst == burst && r.point.coords.2 == axis as u64)
}

fn figure3() -> Outcome {
    let out = fig3()?;
    ensure(out.rows.iter().all(|r| r.summary.replications >= 20), || "fewer than 20 seeds".into())?;
    let n_axis = preset(Preset::Fig3).axis.len();
    let mut compared = 0;
    for ai in 0..n_axis {
        let arq = find(&out.rows, "arq", 1.0, ai).ok_or("missing arq row")?;
        for scheme in ["generation", "sliding-window"] {
            if let Some(row) = find(&out.rows, scheme, 1.0, ai) {
                ensure(significantly_less(delay(row), delay(arq)), || {
                    format!("E[L]=1 R={}: {scheme} {:?} vs arq {:?}", row.point.redundancy, delay(row), delay(arq))
                })?;
                compared += 1;
            }
        }
    }
    // Smallest R at which the sliding-window scheme is runnable.
    let sw = (0..n_axis)
        .find_map(|ai| find(&out.rows, "sliding-window", 8.0, ai))
        .ok_or("no sliding-window row at E[L]=8")?;
    let arq = find(&out.rows, "arq", 8.0, sw.point.coords.2 as usize).ok_or("missing arq row")?;
    ensure(significantly_less(delay(arq), delay(sw)), || {
        format!("E[L]=8 R={}: sliding-window {:?} vs arq {:?}", sw.point.redundancy, delay(sw), delay(arq))
    })?;
    Ok(format!(
        "E[L]=1: coding below ARQ at {compared} points; E[L]=8 R={}: SW {:.1}±{:.1} ms > ARQ {:.1}±{:.1} ms ({} infeasible points skipped)",
        sw.point.redundancy.as_f64(),
        delay(sw).0,
        delay(sw).1,
        delay(arq).0,
        delay(arq).1,
        out.skipped.len()
    ))
}

fn figure4() -> Outcome {
    let out = run_sweep(&reduced(Preset::Fig4, 1)).map_err(|e| e.to_string())?;
    let eta = |r: &SweepRow| (r.summary.efficiency, r.summary.efficiency_half_width.unwrap_or(0.0));
    let (mut gen_sum, mut sw_sum, mut matched) = (0.0, 0.0, 0);
    for ai in 0..preset(Preset::Fig4).axis.len() {
        let (Some(g), Some(s)) = (find(&out.rows, "generation", 8.0, ai), find(&out.rows, "sliding-window", 8.0, ai)) else {
            continue;
        };
        ensure(g.summary.replications >= 20, || "fewer than 20 seeds".into())?;
        ensure(!significantly_less(eta(s), eta(g)), || {
            format!("R={}: generation {:?} significantly above sliding-window {:?}", g.point.redundancy, eta(g), eta(s))
        })?;
        gen_sum += eta(g).0;
        sw_sum += eta(s).0;
        matched += 1;
    }
    ensure(matched > 0, || "no matched R".into())?;
    ensure(gen_sum <= sw_sum, || format!("mean eta generation {gen_sum} > sliding-window {sw_sum}"))?;
    Ok(format!(
        "{matched} matched R at E[L]=8; mean eta generation {:.4} <= sliding-window {:.4}",
        gen_sum / matched as f64,
        sw_sum / matched as f64
    ))
}

fn determinism() -> Outcome {
    let first = fig3()?;
    let again = run_sweep(&reduced(Preset::Fig3, 2)).map_err(|e| e.to_string())?;
    ensure(first.csv == again.csv, || "fig3 CSV differs between runs".into())?;
    let t = {
        let mut s = preset(Preset::Fig7);
        s.tandem.as_mut().unwrap().stream_len = 2_000;
        s.replications = 2;
        s
    };
    let a = satnc_cli::sweep::run_tandem_sweep(&t).map_err(|e| e.to_string())?;
    let b = satnc_cli::sweep::run_tandem_sweep(&t).map_err(|e| e.to_string())?;
    ensure(a.csv == b.csv, || "fig7 CSV differs between runs".into())?;
    Ok(format!("fig3 CSV ({} bytes, 1 vs 2 workers) and fig7 CSV byte-identical", first.csv.len()))
}

// ---------------------------------------------------------------- 8

fn overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    !significantly_less(a, b) && !significantly_less(b, a)
}

fn figure5() -> Outcome {
    let spec = reduced(Preset::Fig5, 1);
    let out = run_sweep(&spec).map_err(|e| e.to_string())?;
    let per = |r: &SweepRow| (r.summary.per, r.summary.per_half_width.unwrap_or(0.0));
    let mut series = 0;
    for &burst in &spec.mean_bursts {
        for li in 0..spec.levels.len() as u64 {
            let pick = |scheme: &str| -> Vec<&SweepRow> {
                out.rows
                    .iter()
                    .filter(|r| r.point.scheme == scheme && r.point.mean_burst == burst && r.point.coords.1 == li)
                    .collect()
            };
            let gen = pick("generation");
            let sw = pick("sliding-window");
            ensure(gen.len() == spec.axis.len() && sw.len() == spec.axis.len(), || "missing rows".into())?;
            for w in gen.windows(2) {
                ensure(!significantly_less(per(w[0]), per(w[1])), || {
                    format!(
                        "E[L]={burst} R={}: generation PER rises from k={:?} {:?} to k={:?} {:?}",
                        w[0].point.redundancy, w[0].point.k, per(w[0]), w[1].point.k, per(w[1])
                    )
                })?;
            }
            for (i, a) in sw.iter().enumerate() {
                for b in &sw[i + 1..] {
                    ensure(overlap(per(a), per(b)), || {
                        format!("E[L]={burst}: sliding-window PER {:?} vs {:?} across k", per(a), per(b))
                    })?;
                    ensure(overlap(delay(a), delay(b)), || {
                        format!("E[L]={burst}: sliding-window E[D] {:?} vs {:?} across k", delay(a), delay(b))
                    })?;
                }
            }
            series += 1;
        }
    }
    Ok(format!("{series} (E[L], R) series: generation PER non-increasing, sliding-window flat"))
}

// ---------------------------------------------------------------- 9

fn convexity() -> Outcome {
    let base = SimConfig {
        redundancy: Redundancy::new(5, 4).unwrap(),
        mean_burst: 1.0,
        stream_len: SWEEP_STREAM,
        ..preset(Preset::Fig3).base
    };
    // k(R-1) is integral on this grid, so every point runs at R = 1.25 exactly.
    let options = OptimizeOptions {
        grid: vec![4, 8, 16, 32, 64, 128],
        replications: 20,
        refine: false,
    };
    let pool = worker_pool(1).map_err(|e| e.to_string())?;
    let sel = optimize_generation_size(&base, &options, 9, &pool).map_err(|e| e.to_string())?;
    let curve: Vec<_> = sel.grid_curve().cloned().collect();
    ensure(unimodal_within_ci(&curve), || format!("curve not unimodal: {curve:?}"))?;
    let best = curve
        .iter()
        .min_by(|a, b| a.mean_delay_ms.total_cmp(&b.mean_delay_ms))
        .ok_or("empty curve")?;
    ensure(sel.k_star == best.k && sel.grid_best == best.k, || {
        format!("k* {} but grid arg-min {}", sel.k_star, best.k)
    })?;
    let shape = curve
        .iter()
        .map(|p| format!("{}:{:.1}", p.k, p.mean_delay_ms))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(format!("k*={} [{shape}]", sel.k_star))
}

// ---------------------------------------------------------------- 10

fn tandem() -> Outcome {
    let count = e2e_redundancy_count(1000, &[0.1, 0.1, 0.1]).map_err(|e| e.to_string())?;
    ensure(count == 372, || format!("e2e_redundancy_count = {count}"))?;

    let run = |strategy, block_size, stream_len, seed| -> Result<TandemReport, String> {
        let cfg = TandemConfig {
            block_size,
            payload_len: 8,
            seed,
            ..TandemConfig::new([0.1; 3], stream_len, strategy)
        };
        run_tandem(&cfg).map_err(|e| e.to_string())
    };
    let (mut carried_e2e, mut carried_hbh) = (0u64, 0u64);
    let (mut useful, mut received) = ([[0u64; 3]; 2], [[0u64; 3]; 2]);
    for seed in 0..4 {
        for (si, strategy) in [Strategy::EndToEnd, Strategy::HopByHop].into_iter().enumerate() {
            let rep = run(strategy, Some(256), 10_000, seed)?;
            ensure(rep.sink_decodes == rep.blocks && rep.relay_decodes == 0, || {
                format!("{strategy}: {} sink solves for {} blocks", rep.sink_decodes, rep.blocks)
            })?;
            for l in 0..3 {
                useful[si][l] += rep.links[l].useful_dof_delivered;
                received[si][l] += rep.links[l].packets_received;
            }
            match strategy {
                Strategy::EndToEnd => carried_e2e += rep.links[0].packets_carried,
                Strategy::HopByHop => carried_hbh += rep.links[0].packets_carried,
            }
        }
    }
    let ratio = carried_e2e as f64 / carried_hbh as f64;
    let target = 0.9f64.powi(-2);
    ensure((ratio - target).abs() / target <= 0.02, || format!("load ratio {ratio} vs {target}"))?;
    let eta = |s: usize, l: usize| useful[s][l] as f64 / received[s][l] as f64;
    for l in 0..3 {
        ensure(eta(1, l) >= eta(0, l), || format!("link {}: hop-by-hop {} < e2e {}", l + 1, eta(1, l), eta(0, l)))?;
    }
    for strategy in [Strategy::EndToEnd, Strategy::HopByHop] {
        let rep = run(strategy, None, 1_000, 7)?;
        ensure(rep.sink_decodes == 1 && rep.relay_decodes == 0, || {
            format!("{strategy} whole stream: {} sink solves", rep.sink_decodes)
        })?;
    }
    Ok(format!(
        "count 372; load ratio {ratio:.4} vs {target:.4}; eta e2e [{:.3} {:.3} {:.3}] hop-by-hop [{:.3} {:.3} {:.3}]; one solve per block",
        eta(0, 0),
        eta(0, 1),
        eta(0, 2),
        eta(1, 0),
        eta(1, 1),
        eta(1, 2)
    ))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, u64, fn() -> Outcome); 11] = [
        (1, "field correctness", 5, field_correctness),
        (2, "decoder-oracle equivalence", 60, decoder_oracle),
        (3, "channel calibration", 10, channel_calibration),
        (4, "closed-form efficiency", 60, closed_form_efficiency),
        (5, "reliability", 120, reliability),
        (6, "delay versus ARQ", 600, figure3),
        (7, "efficiency ordering", 600, figure4),
        (8, "unreliable trends in k", 600, figure5),
        (9, "delay convex in k", 600, convexity),
        (10, "tandem", 60, tandem),
        (11, "determinism", 600, determinism),
    ];
    let mut failed = 0;
    for (n, name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= Duration::from_secs(limit) {
                Ok(d)
            } else {
                Err(format!("{d}; took {elapsed:.1?}, limit {limit} s"))
            }
        });
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS {name}: {detail} ({elapsed:.1?})"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n}: FAIL {name}: {reason} ({elapsed:.1?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
