//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Every check uses its own brute-force or closed-form oracle rather than
//! the library routine under test.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use pathosynth::config::{Config, PathologyConfig};
use pathosynth::diffusion::{
    ddpm_sample, forward_diffuse_values, ConditionChannels, NoiseSchedule, OracleDenoiser, VarianceMode,
};
use pathosynth::eval::{
    dice, median, per_label_dice, rater_statistics, summarize, welch_ttest, LabelName, RaterTable,
};
use pathosynth::labels::{clean_small_components, extract_fourth_ventricle, split_hemispheres, HemisphereCodes, Side};
use pathosynth::morphology::{BinaryMask, Connectivity};
use pathosynth::pathology::{
    synthesize_hypoplasia, synthesize_microcephaly, synthesize_ventriculomegaly, HypoplasiaMode, Pathology,
    PathologyPlan, Symmetry,
};
use pathosynth::phantom::{brain_phantom, intensity_phantom, sphere_brain};
use pathosynth::pipeline::{self, GenerateOptions, PrepareOptions};
use pathosynth::{IntensityVolume, LabelVolume, VolumeGeometry, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("plan sampler contract", plan_sampler),
        ("ventriculomegaly constraints", ventriculomegaly),
        ("microcephaly conservation", microcephaly),
        ("hypoplasia geometry", hypoplasia),
        ("cleanup rule", cleanup),
        ("diffusion math", diffusion),
        ("preprocessing round-trip", preprocessing),
        ("evaluation arithmetic", evaluation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        return Err(format!("{what} took {t:?}, limit {limit:?}"));
    }
    Ok(())
}

fn plan_sampler() -> Outcome {
    let start = Instant::now();
    let n = 100_000u64;
    let mut first = BTreeMap::new();
    let (mut vm, mut symmetric, mut violations) = (0u64, 0u64, 0u64);
    for seed in 0..n {
        let plan = PathologyPlan::sample(seed);
        if plan.cerebellar_hypoplasia && plan.pontocerebellar_hypoplasia {
            violations += 1;
        }
        if plan.microcephaly && !plan.ventriculomegaly {
            violations += 1;
        }
        let p = plan.primary.ok_or("sampled plan has no first pathology")?;
        if !plan.contains(p) {
            violations += 1;
        }
        *first.entry(p).or_insert(0u64) += 1;
        if plan.ventriculomegaly {
            vm += 1;
            symmetric += (plan.vm_symmetry == Symmetry::Symmetric) as u64;
        }
    }
    within(start, Duration::from_secs(10), "100,000 plans")?;
    ensure!(violations == 0, "{violations} exclusivity/implication violations");
    let mut freqs = Vec::new();
    for p in Pathology::ALL {
        let f = *first.get(&p).unwrap_or(&0) as f64 / n as f64;
        ensure!((f - 0.25).abs() <= 0.01, "first-pathology frequency of {p} = {f}");
        freqs.push(format!("{}={f:.4}", p.short_name()));
    }
    let sym = symmetric as f64 / vm as f64;
    ensure!((sym - 0.5).abs() <= 0.01, "symmetric share {sym}");
    Ok(format!("0 violations; first {}; symmetric {sym:.4}", freqs.join(" ")))
}

/// True when some voxel of `b` lies strictly closer than `limit` to a
/// voxel of `a`, by scanning the cube around every voxel of `a`.
fn any_closer_than(a: &BinaryMask, b: &BinaryMask, limit: f64) -> Option<([usize; 3], [usize; 3])> {
    let dims = a.dims();
    let r = limit.ceil() as isize;
    for p in a.voxels() {
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                    if d2 >= limit * limit {
                        continue;
                    }
                    let q = [p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz];
                    if (0..3).any(|k| q[k] < 0 || q[k] >= dims[k] as isize) {
                        continue;
                    }
                    let q = q.map(|c| c as usize);
                    if b.get(q) {
                        return Some((p, q));
                    }
                }
            }
        }
    }
    None
}

fn ventriculomegaly() -> Outcome {
    let start = Instant::now();
    let cfg = PathologyConfig::default();
    let mut worst_ratio: f64 = 0.0;
    let mut grown_total = 0usize;
    for i in 0..20u64 {
        let labels = brain_phantom([96, 96, 96], 1000 + i);
        let (split, _) = split_hemispheres(&labels, None).map_err(|e| e.to_string())?;
        let codes = HemisphereCodes::from_vocabulary(split.vocabulary()).ok_or("no hemisphere codes")?;
        let mut plan = PathologyPlan::with(&[Pathology::Ventriculomegaly], 1.0, i).map_err(|e| e.to_string())?;
        plan.vm_symmetry = if i % 2 == 0 { Symmetry::Symmetric } else { Symmetry::Asymmetric };
        let (out, _) = synthesize_ventriculomegaly(&split, &plan, &cfg).map_err(|e| e.to_string())?;
        for side in Side::BOTH {
            let wm_before = split.voxels().iter().filter(|&&c| c == codes.white_matter(side)).count();
            let vent_after = out.voxels().iter().filter(|&&c| c == codes.ventricles(side)).count();
            // exact integer form of vent ≤ 0.65 · wm
            ensure!(
                100 * vent_after <= 65 * wm_before,
                "phantom {i} {side:?}: ventricles {vent_after} > 0.65 × WM {wm_before}"
            );
            worst_ratio = worst_ratio.max(vent_after as f64 / wm_before as f64);
        }
        let before = split.mask_of(&[codes.ventricles_left, codes.ventricles_right]);
        let after = out.mask_of(&[codes.ventricles_left, codes.ventricles_right]);
        grown_total += after.count() - before.count();
        let fourth = extract_fourth_ventricle(&labels).map_err(|e| e.to_string())?;
        let lateral = after.difference(&fourth);
        let vocab = out.vocabulary();
        let other = BinaryMask::from_bits(
            out.dims(),
            out.voxels()
                .iter()
                .map(|&c| vocab.role(c).is_none_or(|r| !r.is_white_matter() && !r.is_ventricle()))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        if let Some((p, q)) = any_closer_than(&lateral, &other, 2.0) {
            return Err(format!("phantom {i}: ventricle voxel {p:?} is within 2 voxels of {q:?}"));
        }
    }
    within(start, Duration::from_secs(120), "20 phantoms")?;
    ensure!(grown_total > 0, "no ventricle growth at all");
    Ok(format!(
        "20 phantoms at 96³; max ventricle/WM ratio {worst_ratio:.4} ≤ 0.65; no voxel within distance 2; {grown_total} voxels claimed"
    ))
}

fn microcephaly() -> Outcome {
    let cfg = PathologyConfig::default();
    let mut worst: f64 = 0.0;
    for (radius, dims) in [(14.0, [34usize; 3]), (20.0, [46; 3]), (26.0, [58; 3])] {
        let labels = sphere_brain(dims, radius);
        for severity in [0.25, 0.5, 0.75, 1.0] {
            let (out, _) = synthesize_microcephaly(&labels, severity, &cfg).map_err(|e| e.to_string())?;
            let fg = |l: &LabelVolume| l.voxels().iter().map(|&c| c != 0).collect::<Vec<_>>();
            ensure!(fg(&out) == fg(&labels), "r={radius} s={severity}: foreground changed");
            let non_csf = |l: &LabelVolume| l.voxels().iter().filter(|&&c| c != 0 && c != 1).count() as f64;
            let f = 1.0 - 0.1 * severity;
            let ratio = non_csf(&out) / non_csf(&labels);
            let rel = (ratio / (f * f * f) - 1.0).abs();
            ensure!(rel <= 0.10, "r={radius} s={severity}: ratio {ratio:.4} vs f³ {:.4}", f * f * f);
            worst = worst.max(rel);
        }
    }
    Ok(format!("3 sphere radii × 4 severities; union identical; worst |ratio/f³ − 1| = {worst:.4}"))
}

fn xy_extents(labels: &LabelVolume, code: u16) -> Option<[usize; 2]> {
    let dims = labels.dims();
    let (mut lo, mut hi) = ([usize::MAX; 2], [0usize; 2]);
    for (i, &c) in labels.voxels().iter().enumerate() {
        if c == code {
            let (x, y) = (i % dims[0], (i / dims[0]) % dims[1]);
            lo = [lo[0].min(x), lo[1].min(y)];
            hi = [hi[0].max(x), hi[1].max(y)];
        }
    }
    (lo[0] != usize::MAX).then(|| [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1])
}

fn touches_26(labels: &LabelVolume, a: u16, b: u16) -> bool {
    let dims = labels.dims();
    let v = labels.voxels();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if v[x + dims[0] * (y + dims[1] * z)] != a {
                    continue;
                }
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if qx < 0 || qy < 0 || qz < 0 {
                                continue;
                            }
                            let (qx, qy, qz) = (qx as usize, qy as usize, qz as usize);
                            if qx < dims[0] && qy < dims[1] && qz < dims[2] && v[qx + dims[0] * (qy + dims[1] * qz)] == b {
                                return true;
                            }
                        }
                    }
                }
            }
        }
    }
    false
}

fn hypoplasia() -> Outcome {
    let cfg = PathologyConfig::default();
    let (brainstem, cerebellum) = (7u16, 5u16);
    let mut shown = Vec::new();
    for seed in 0..5u64 {
        let labels = brain_phantom([128, 128, 128], 500 + seed);
        let e0 = xy_extents(&labels, brainstem).ok_or("phantom has no brainstem")?;
        let (pch, _) = synthesize_hypoplasia(&labels, 1.0, HypoplasiaMode::Pontocerebellar, &cfg)
            .map_err(|e| e.to_string())?;
        let e1 = xy_extents(&pch, brainstem).ok_or("brainstem vanished")?;
        for a in 0..2 {
            let expected = 0.8 * e0[a] as f64;
            ensure!(
                (e1[a] as f64 - expected).abs() <= 2.0,
                "seed {seed} axis {a}: extent {} vs 0.8 × {} = {expected}",
                e1[a],
                e0[a]
            );
        }
        ensure!(touches_26(&pch, cerebellum, brainstem), "seed {seed}: cerebellum detached from brainstem");
        let (ch, _) =
            synthesize_hypoplasia(&labels, 1.0, HypoplasiaMode::Cerebellar, &cfg).map_err(|e| e.to_string())?;
        let stem = |l: &LabelVolume| l.voxels().iter().map(|&c| c == brainstem).collect::<Vec<_>>();
        ensure!(stem(&ch) == stem(&labels), "seed {seed}: cerebellar mode changed the brainstem");
        ensure!(touches_26(&ch, cerebellum, brainstem), "seed {seed}: cerebellar mode detached the cerebellum");
        shown.push(format!("{e0:?}→{e1:?}"));
    }
    Ok(format!(
        "5 phantoms at 128³; brainstem x-y extents {}; attached; CH brainstem bit-identical",
        shown.join(" ")
    ))
}

/// Independent cleanup: union-find components per code, shell counted by
/// a sorted-dedup list, ties to the smallest code.
fn cleanup_oracle(v: &[u16], dims: [usize; 3], min_size: usize) -> Vec<u16> {
    let n = v.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let neighbours = |i: usize| {
        let (x, y, z) = (i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1]));
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if qx >= 0 && qy >= 0 && qz >= 0 && (qx as usize) < dims[0] && (qy as usize) < dims[1] && (qz as usize) < dims[2] {
                        out.push(idx(qx as usize, qy as usize, qz as usize));
                    }
                }
            }
        }
        out
    };
    for i in 0..n {
        for j in neighbours(i) {
            if v[i] == v[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out = v.to_vec();
    for members in groups.values() {
        let code = v[members[0]];
        if code == 0 || members.len() >= min_size {
            continue;
        }
        let mut shell: Vec<usize> = members.iter().flat_map(|&i| neighbours(i)).filter(|j| v[*j] != code || !members.contains(j)).collect();
        shell.sort_unstable();
        shell.dedup();
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for j in shell {
            *counts.entry(v[j]).or_default() += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        if let Some((&c, _)) = counts.iter().find(|(_, &k)| k == best) {
            for &i in members {
                out[i] = c;
            }
        }
    }
    out
}

fn cleanup() -> Outcome {
    let dims = [28usize, 26, 24];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut reassigned = 0usize;
    for trial in 0..40 {
        // coarse blocks of codes 0..=7 as the host tissue
        let block = 6;
        let nb = dims.map(|d| d.div_ceil(block));
        let block_codes: Vec<u16> = (0..nb.iter().product::<usize>()).map(|_| rng.random_range(0..8)).collect();
        let mut v: Vec<u16> = (0..dims.iter().product::<usize>())
            .map(|i| {
                let (x, y, z) = (i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1]));
                block_codes[x / block + nb[0] * (y / block + nb[1] * (z / block))]
            })
            .collect();
        // planted islands: random walks of a random code
        for _ in 0..25 {
            let size = rng.random_range(1..=40usize);
            let code = rng.random_range(1..8u16);
            let mut p = dims.map(|d| rng.random_range(0..d));
            for _ in 0..size {
                v[p[0] + dims[0] * (p[1] + dims[1] * p[2])] = code;
                let a = rng.random_range(0..3);
                let step: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
                p[a] = (p[a] as i64 + step).clamp(0, dims[a] as i64 - 1) as usize;
            }
        }
        let labels = LabelVolume::new(VolumeGeometry::unit(dims).unwrap(), v.clone(), Vocabulary::feta())
            .map_err(|e| e.to_string())?;
        let got = clean_small_components(&labels, 20, Connectivity::TwentySix);
        let expected = cleanup_oracle(&v, dims, 20);
        if got.voxels() != expected.as_slice() {
            let i = got.voxels().iter().zip(&expected).position(|(a, b)| a != b).unwrap();
            return Err(format!("trial {trial}: voxel {i} is {} but oracle says {}", got.voxels()[i], expected[i]));
        }
        reassigned += v.iter().zip(&expected).filter(|(a, b)| a != b).count();
    }
    Ok(format!(
        "40 fuzzed volumes with 1000 planted islands (sizes 1..=40) match the brute-force oracle exactly; {reassigned} voxels reassigned"
    ))
}

fn diffusion() -> Outcome {
    let schedule = NoiseSchedule::linear(1000, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0: Vec<f64> = (0..n).map(|i| ((i % 17) as f64 / 8.0) - 1.0).collect();
    let x0_mean = x0.iter().sum::<f64>() / n as f64;
    let mut marginal = Vec::new();
    for t in [1usize, 10, 100, 500, 1000] {
        let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let xt = forward_diffuse_values(&x0, t, &eps, &schedule).map_err(|e| e.to_string())?;
        // independent ᾱ_t by direct product of (1 − β_s)
        let ab: f64 = (1..=t).map(|s| 1.0 - (1e-4 + (0.02 - 1e-4) * (s - 1) as f64 / 999.0)).product();
        // residual after removing the known signal is N(0, 1 − ᾱ_t)
        let resid: Vec<f64> = xt.iter().zip(&x0).map(|(x, s)| x - ab.sqrt() * s).collect();
        let m = resid.iter().sum::<f64>() / n as f64;
        let var = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = (1.0 - ab).sqrt();
        let se_mean = sd / (n as f64).sqrt();
        let se_var = (1.0 - ab) * (2.0 / (n as f64 - 1.0)).sqrt();
        ensure!(m.abs() <= 3.0 * se_mean, "t={t}: residual mean {m} beyond 3 SE {se_mean}");
        ensure!((var - (1.0 - ab)).abs() <= 3.0 * se_var, "t={t}: variance {var} vs {}", 1.0 - ab);
        let mean = xt.iter().sum::<f64>() / n as f64;
        let se_total = ((1.0 - ab) / n as f64).sqrt();
        ensure!((mean - ab.sqrt() * x0_mean).abs() <= 3.0 * se_total, "t={t}: mean {mean}");
        marginal.push(format!("t={t}"));
    }

    let dims = [20usize, 20, 25];
    let nv: usize = dims.iter().product();
    let target: Vec<f64> = (0..nv).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    let mut cond = vec![0.0f32; 4 * nv];
    for i in 0..nv {
        cond[(i % 4) * nv + i] = 1.0;
    }
    let condition = ConditionChannels::from_raw(dims, cond).map_err(|e| e.to_string())?;
    let rmse_at = |t: usize| -> Result<f64, String> {
        let sched = NoiseSchedule::linear(t, 1e-4, 0.02).map_err(|e| e.to_string())?;
        let mut oracle = OracleDenoiser::new(target.clone(), sched.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let out = ddpm_sample(&mut oracle, &condition, &sched, &mut rng, VarianceMode::Zero).map_err(|e| e.to_string())?;
        Ok((out.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / nv as f64).sqrt())
    };
    let r50 = rmse_at(50)?;
    let r1 = rmse_at(1)?;
    ensure!(r50 < 1e-3, "T=50 RMSE {r50}");
    ensure!(r1 < 1e-5, "T=1 RMSE {r1}");

    // ᾱ_1000 from a 50-digit evaluation of ∏ (1 − β_t)
    let reference = 4.0358297653756833e-5;
    let got = schedule.alpha_bar(1000).map_err(|e| e.to_string())?;
    let rel = (got / reference - 1.0).abs();
    ensure!(rel < 5e-7, "ᾱ_1000 = {got:e}, reference {reference:e}");
    Ok(format!(
        "marginals within 3 SE at {}; oracle RMSE T=50 {r50:.2e}, T=1 {r1:.2e}; ᾱ_1000 = {got:.10e} (rel err {rel:.1e})",
        marginal.join(",")
    ))
}

fn write_phantom(dir: &Path, id: &str, dims: [usize; 3], seed: u64) -> (LabelVolume, IntensityVolume) {
    let labels = brain_phantom(dims, seed);
    let image = intensity_phantom(&labels, 0.0, seed);
    labels.write(dir.join(format!("{id}_dseg.nii.gz"))).unwrap();
    image.write(dir.join(format!("{id}_T2w.nii.gz"))).unwrap();
    (labels, image)
}

fn preprocessing() -> Outcome {
    let cfg = Config::default();
    let raw = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prepared = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reverted = tempfile::tempdir().map_err(|e| e.to_string())?;
    let shapes = [[96usize, 112, 100], [128, 120, 110], [80, 80, 80]];
    let mut originals = Vec::new();
    for (i, dims) in shapes.iter().enumerate() {
        originals.push(write_phantom(raw.path(), &format!("sub-{i}"), *dims, 40 + i as u64));
    }
    let opts = PrepareOptions { jobs: 2, ..Default::default() };
    let m = pipeline::prepare(raw.path(), prepared.path(), &cfg, &opts).map_err(|e| e.to_string())?;
    ensure!(m.failures() == 0, "prepare failures: {:?}", m.entries);
    let m = pipeline::revert(prepared.path(), prepared.path(), reverted.path(), 2).map_err(|e| e.to_string())?;
    ensure!(m.failures() == 0, "revert failures: {:?}", m.entries);
    let mut worst_dice: f64 = 1.0;
    for (i, (labels, image)) in originals.iter().enumerate() {
        let id = format!("sub-{i}");
        let back = LabelVolume::read(reverted.path().join(format!("{id}_dseg.nii.gz")), None).map_err(|e| e.to_string())?;
        let img = IntensityVolume::read(reverted.path().join(format!("{id}_T2w.nii.gz"))).map_err(|e| e.to_string())?;
        ensure!(back.dims() == labels.dims() && img.dims() == image.dims(), "{id}: dims {:?}", back.dims());
        // reference classes by direct lookup of the default class map
        let class_of = |c: u16| match c {
            0 => 0u16,
            1 | 4 => 1,
            2 => 2,
            _ => 3,
        };
        let expected: Vec<u16> = clean_small_components(labels, 20, Connectivity::TwentySix)
            .voxels()
            .iter()
            .map(|&c| class_of(c))
            .collect();
        for class in 1..4u16 {
            let a = BinaryMask::from_bits(back.dims(), back.voxels().iter().map(|&c| c == class).collect()).unwrap();
            let b = BinaryMask::from_bits(back.dims(), expected.iter().map(|&c| c == class).collect()).unwrap();
            let d = dice(&a, &b).map_err(|e| e.to_string())?;
            worst_dice = worst_dice.min(d);
            ensure!(d >= 0.95, "{id}: class {class} Dice {d:.4} < 0.95");
        }
    }

    // intensity round trip: resize to the cropped dims so resampling is the
    // identity and only normalization, crop and pad are exercised
    let raw2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let prep2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rev2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (labels, image) = write_phantom(raw2.path(), "sub-x", [72, 84, 76], 77);
    let fg = labels.foreground();
    let (lo, hi) = fg.bounding_box().ok_or("empty phantom")?;
    let margin = cfg.preprocess.crop_margin;
    let cropped: [usize; 3] = std::array::from_fn(|a| {
        (hi[a] + margin).min(labels.dims()[a] - 1) - lo[a].saturating_sub(margin) + 1
    });
    let mut identity_cfg = cfg.clone();
    identity_cfg.preprocess.target_dims = cropped;
    pipeline::prepare(raw2.path(), prep2.path(), &identity_cfg, &PrepareOptions::default()).map_err(|e| e.to_string())?;
    pipeline::revert(prep2.path(), prep2.path(), rev2.path(), 1).map_err(|e| e.to_string())?;
    let back = IntensityVolume::read(rev2.path().join("sub-x_T2w.nii.gz")).map_err(|e| e.to_string())?;
    ensure!(back.dims() == image.dims(), "intensity dims {:?}", back.dims());
    let scale = image.voxels().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst_rel = back
        .voxels()
        .iter()
        .zip(image.voxels())
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max);
    ensure!(worst_rel <= 1e-6, "intensity round-trip relative error {worst_rel:e}");
    Ok(format!(
        "3 phantoms → 160³ → original dims exact; worst class Dice {worst_dice:.4} ≥ 0.95; intensity rel err {worst_rel:.1e} (identity resize)"
    ))
}

/// Median by counting: the value with at most ⌊n/2⌋ strictly smaller
/// elements, averaged with its partner for even n.
fn oracle_median(values: &[f64]) -> f64 {
    let n = values.len();
    let kth = |k: usize| {
        *values
            .iter()
            .find(|v| {
                let below = values.iter().filter(|w| w < v).count();
                let equal = values.iter().filter(|w| w == v).count();
                below <= k && k < below + equal
            })
            .unwrap()
    };
    if n % 2 == 1 {
        kth(n / 2)
    } else {
        (kth(n / 2 - 1) + kth(n / 2)) / 2.0
    }
}

fn evaluation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dims = [18usize, 16, 14];
    let n: usize = dims.iter().product();
    let geometry = VolumeGeometry::unit(dims).unwrap();
    for trial in 0..20 {
        let p: Vec<u16> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let t: Vec<u16> = (0..n).map(|_| if rng.random_bool(0.6) { 0 } else { rng.random_range(0..8) }).collect();
        let pred = LabelVolume::new(geometry.clone(), p.clone(), Vocabulary::feta()).unwrap();
        let truth = LabelVolume::new(geometry.clone(), t.clone(), Vocabulary::feta()).unwrap();
        let codes: Vec<u16> = (1..8).collect();
        let got = per_label_dice(&pred, &truth, &codes).map_err(|e| e.to_string())?;
        for (k, &c) in codes.iter().enumerate() {
            let a = p.iter().filter(|&&x| x == c).count();
            let b = t.iter().filter(|&&x| x == c).count();
            let both = p.iter().zip(&t).filter(|(&x, &y)| x == c && y == c).count();
            let expected = if a + b == 0 { 1.0 } else { 2.0 * both as f64 / (a + b) as f64 };
            ensure!(got[k] == expected, "trial {trial} label {c}: {} vs {expected}", got[k]);
        }
    }
    for trial in 0..50 {
        let subjects = if trial % 2 == 0 { 26 } else { 25 };
        let table: Vec<Vec<f64>> =
            (0..subjects).map(|_| (0..7).map(|_| (rng.random_range(0..=1000) as f64) / 1000.0).collect()).collect();
        let names: Vec<LabelName> = (1..=7).map(|c| LabelName { code: c, name: format!("l{c}") }).collect();
        let ids: Vec<String> = (0..subjects).map(|s| format!("s{s}")).collect();
        let report = summarize(names, ids, table.clone()).map_err(|e| e.to_string())?;
        let medians: Vec<f64> = (0..7).map(|j| oracle_median(&table.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
        let mut sum = 0.0;
        for m in &medians {
            sum += m;
        }
        ensure!(report.medians == medians, "trial {trial}: medians {:?} vs {medians:?}", report.medians);
        ensure!(report.summary == sum / 7.0, "trial {trial}: summary {} vs {}", report.summary, sum / 7.0);
        ensure!(median(&medians).is_ok(), "median failed");
    }

    let w = welch_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ensure!((w.t + 1.0).abs() < 1e-12 && (w.df - 8.0).abs() < 1e-12, "t = {}, df = {}", w.t, w.df);
    ensure!((w.p - 0.3466).abs() <= 0.0005, "p = {}", w.p);

    let table = RaterTable::parse_csv(
        "rater,arm,unusable,poor,good,excellent
1,real,9,14,13,14
1,synthetic,0,5,27,18
2,real,15,10,14,11
2,synthetic,1,8,32,9
3,real,13,24,13,0
3,synthetic,3,43,3,1
4,real,6,15,20,9
4,synthetic,1,8,32,9
",
    )
    .map_err(|e| e.to_string())?;
    let stats = rater_statistics(&table).map_err(|e| e.to_string())?;
    ensure!(stats.real_mean == 1.425, "real mean {}", stats.real_mean);
    ensure!(stats.synthetic_mean == 1.815, "synthetic mean {}", stats.synthetic_mean);
    Ok(format!(
        "per-label Dice and 50 random 7-label summaries match brute force exactly; Welch t={:.3} df={:.3} p={:.4}; rater means {} / {} (count-weighted, not the per-case 1.34 / 1.73)",
        w.t, w.df, w.p, stats.real_mean, stats.synthetic_mean
    ))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let raw = tempfile::tempdir().map_err(|e| e.to_string())?;
    for i in 0..6u64 {
        brain_phantom([48, 48, 48], 300 + i)
            .write(raw.path().join(format!("sub-{i:02}_dseg.nii.gz")))
            .map_err(|e| e.to_string())?;
    }
    let cfg = Config::default();
    let run = |jobs: usize| -> Result<Vec<(String, Vec<u8>)>, String> {
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let opts = GenerateOptions { count: 3, seed: 20240601, jobs, ..Default::default() };
        let m = pipeline::generate(raw.path(), out.path(), &cfg, &opts).map_err(|e| e.to_string())?;
        ensure!(m.failures() == 0, "generate failures: {:?}", m.entries);
        Ok(dir_bytes(out.path()))
    };
    let a = run(1)?;
    let b = run(1)?;
    let c = run(8)?;
    ensure!(a == b, "two serial runs differ");
    ensure!(a == c, "--jobs 1 and --jobs 8 differ");
    let bytes: usize = a.iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} files ({bytes} bytes) byte-identical across two runs and jobs 1 vs 8", a.len()))
}
