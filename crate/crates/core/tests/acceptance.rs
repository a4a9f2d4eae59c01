//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use peerenc_core::config::RunConfig;
use peerenc_core::design::{run_design, run_design_replicate, DesignConfig, ExperimentData};
use peerenc_core::dgp::{build_population, BlockSize, DgpConfig, OutcomeModel, Representation, StrataMix};
use peerenc_core::estimands::{
    estimand_report, identity_tolerance, theorem_1_check, theorem_2_check, theorem_3_check,
    theorem_3_mirror_check, BlockValues, ExactEngine, IdentityReport,
};
use peerenc_core::estimators::{estimate, ldt_hat};
use peerenc_core::mechanisms::{entry_bit, Mechanism};
use peerenc_core::montecarlo::{replicate, verify_theorems, with_threads};
use peerenc_core::population::{
    Block, ComplianceType, Flags, Individual, OutcomeFunction, OutcomeTable, Population, StructuralOutcome,
};
use peerenc_core::rng::{stream, RandomStream};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

const CO: ComplianceType = ComplianceType::Complier;
const AT: ComplianceType = ComplianceType::AlwaysTaker;
const NT: ComplianceType = ComplianceType::NeverTaker;
const DE: ComplianceType = ComplianceType::Defier;

fn mix(at: f64, co: f64, nt: f64) -> StrataMix {
    StrataMix {
        always_taker: at,
        complier: co,
        never_taker: nt,
        defier: 0.0,
    }
}

fn dgp(blocks: usize, size: BlockSize, strata: StrataMix, outcome: OutcomeModel) -> DgpConfig {
    DgpConfig {
        blocks,
        block_size: size,
        strata,
        outcome,
        monotone: true,
        one_sided: strata.always_taker == 0.0,
        exclusion: true,
        complier_floor: true,
    }
}

fn interference(rep: Representation) -> OutcomeModel {
    OutcomeModel {
        representation: rep,
        direct: 1.5,
        peer: 0.4,
        interaction: -0.3,
        peer_sq: 0.05,
        entry_sd: if rep == Representation::Structural { 0.0 } else { 0.5 },
        ..Default::default()
    }
}

fn hetero_mech(name: &str, pop: &Population, rng: &mut RandomStream) -> Mechanism {
    let probs = pop
        .blocks()
        .iter()
        .map(|b| (0..b.len()).map(|_| rng.random_range(0.05..0.95)).collect())
        .collect();
    Mechanism::per_block(name, probs).unwrap()
}

/// Monotone fuzz population with a mixed table/structural outcome representation.
fn fuzz_population(rng: &mut RandomStream, strata: StrataMix) -> Population {
    let blocks = rng.random_range(2..=20);
    let cfg = dgp(
        blocks,
        BlockSize::Range { min: 1, max: 10 },
        strata,
        interference(Representation::Mixed),
    );
    build_population(&cfg, rng).unwrap()
}

fn random_strata(rng: &mut RandomStream) -> StrataMix {
    let at = rng.random_range(0.0..0.4);
    let nt = rng.random_range(0.0..0.4);
    mix(at, 1.0 - at - nt, nt)
}

fn relative_gap(r: &IdentityReport) -> f64 {
    let block = r
        .block_lhs
        .iter()
        .zip(&r.block_rhs)
        .map(|(l, h)| (l - h).abs() / h.abs().max(1e-3))
        .fold(0.0, f64::max);
    block.max(r.gap.abs() / r.rhs.abs().max(1e-3))
}

fn within(a: &BlockValues, b: &BlockValues, tol: f64) -> bool {
    (a.population - b.population).abs() <= tol
        && a.blocks.len() == b.blocks.len()
        && a.blocks.iter().zip(&b.blocks).all(|(x, y)| (x - y).abs() <= tol)
}

fn random_structural(rng: &mut RandomStream) -> StructuralOutcome {
    StructuralOutcome {
        baseline: rng.random_range(-1.0..1.0),
        direct: rng.random_range(0.5..2.0),
        peer: rng.random_range(-0.5..0.5),
        interaction: rng.random_range(-0.3..0.3),
        peer_sq: rng.random_range(-0.05..0.05),
    }
}

/// Blocks of common size `n` with exactly `c` compliers each, so ET is the same in every block.
fn constant_et_population(rng: &mut RandomStream) -> Population {
    let blocks = rng.random_range(2..=12);
    let n = rng.random_range(1..=8);
    let c = rng.random_range(1..=n);
    let blocks = (0..blocks)
        .map(|_| {
            let mut types: Vec<ComplianceType> = (0..n)
                .map(|j| if j < c { CO } else if rng.random_bool(0.5) { AT } else { NT })
                .collect();
            types.shuffle(rng);
            Block::new(
                types
                    .into_iter()
                    .map(|t| Individual {
                        pt: t.treatment(),
                        outcome: if rng.random_bool(0.5) {
                            OutcomeFunction::Table(OutcomeTable {
                                values: (0..1usize << n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                                z_dependent: false,
                            })
                        } else {
                            OutcomeFunction::Structural(random_structural(rng))
                        },
                    })
                    .collect(),
            )
        })
        .collect();
    Population::new(
        blocks,
        Flags {
            monotone: true,
            one_sided: false,
            exclusion_ok: true,
        },
    )
    .unwrap()
}

const FUZZ_POPULATIONS: usize = 200;

/// Runs one theorem over the fuzz campaign plus a constant-ET campaign for the pooled form.
fn exact_identity_campaign(
    seed: u64,
    check: impl Fn(&ExactEngine, &Population, &Mechanism, &Mechanism) -> peerenc_core::Result<IdentityReport>,
) -> Outcome {
    let engine = ExactEngine::default();
    let mut rng = stream(seed);
    let mut worst: f64 = 0.0;
    let mut pooled_misses = 0;
    let mut tables = 0usize;
    let mut structural = 0usize;
    for k in 0..FUZZ_POPULATIONS {
        let strata = random_strata(&mut rng);
        let pop = fuzz_population(&mut rng, strata);
        for b in pop.blocks() {
            ensure!(b.counts().get(CO) >= 1, "population {k}: block without a complier");
            for ind in &b.individuals {
                if ind.outcome.is_table() {
                    tables += 1;
                } else {
                    structural += 1;
                }
            }
        }
        let phi = hetero_mech("phi", &pop, &mut rng);
        let psi = hetero_mech("psi", &pop, &mut rng);
        let r = ok(check(&engine, &pop, &phi, &psi))?;
        ensure!(r.assumptions_hold, "population {k}: assumptions reported as violated");
        ensure!(
            r.holds,
            "population {k}: lhs {} rhs {} gap {:e} (max block gap {:e})",
            r.lhs,
            r.rhs,
            r.gap,
            r.max_block_gap
        );
        worst = worst.max(relative_gap(&r));
        if r.pooled_gap.is_some_and(|g| g.abs() > 1e-6) {
            pooled_misses += 1;
        }
    }
    ensure!(tables > 0 && structural > 0, "campaign lacks mixed representations");
    for k in 0..50 {
        let pop = constant_et_population(&mut rng);
        let phi = hetero_mech("phi", &pop, &mut rng);
        let psi = hetero_mech("psi", &pop, &mut rng);
        let r = ok(check(&engine, &pop, &phi, &psi))?;
        ensure!(r.holds, "constant-ET population {k}: block form gap {:e}", r.gap);
        let pooled = r.pooled_lhs.unwrap();
        ensure!(
            (pooled - r.rhs).abs() <= identity_tolerance(r.rhs),
            "constant-ET population {k}: pooled gap {:e}",
            pooled - r.rhs
        );
    }
    Ok(format!(
        "{FUZZ_POPULATIONS} fuzzed populations, max relative gap {worst:.1e}; pooled ratio holds on 50 constant-ET populations, misses on {pooled_misses} heterogeneous ones"
    ))
}

fn criterion_1() -> Outcome {
    exact_identity_campaign(101, |e, p, phi, _| theorem_1_check(e, p, phi))
}

fn criterion_2() -> Outcome {
    exact_identity_campaign(202, |e, p, phi, psi| theorem_2_check(e, p, psi, phi))
}

fn criterion_3() -> Outcome {
    let engine = ExactEngine::default();
    let mut rng = stream(303);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let nt = rng.random_range(0.1..0.6);
        let pop = fuzz_population(&mut rng, mix(0.0, 1.0 - nt, nt));
        ensure!(pop.flags().one_sided, "population {k} is not flagged one-sided");
        let phi = hetero_mech("phi", &pop, &mut rng);
        let psi = hetero_mech("psi", &pop, &mut rng);
        let r = ok(theorem_3_check(&engine, &pop, &phi, &psi))?;
        ensure!(r.assumptions_hold && r.holds, "one-sided population {k}: gap {:e}", r.gap);
        worst = worst.max(relative_gap(&r));
    }
    for k in 0..100 {
        let at = rng.random_range(0.1..0.6);
        let pop = fuzz_population(&mut rng, mix(at, 1.0 - at, 0.0));
        let phi = hetero_mech("phi", &pop, &mut rng);
        let psi = hetero_mech("psi", &pop, &mut rng);
        let r = ok(theorem_3_mirror_check(&engine, &pop, &phi, &psi))?;
        ensure!(r.assumptions_hold && r.holds, "all-take population {k}: gap {:e}", r.gap);
        worst = worst.max(relative_gap(&r));
    }
    Ok(format!("100 one-sided and 100 all-take populations, max relative gap {worst:.1e}"))
}

fn structural_block(types: &[ComplianceType], s: StructuralOutcome) -> Block {
    Block::new(
        types
            .iter()
            .enumerate()
            .map(|(j, t)| Individual {
                pt: t.treatment(),
                outcome: OutcomeFunction::Structural(StructuralOutcome {
                    baseline: s.baseline + 0.25 * j as f64,
                    ..s
                }),
            })
            .collect(),
    )
}

/// Outcome `base(d_own, treated peers) + gamma * z_own` stored as an encouragement-dependent table.
fn exclusion_violating_block(types: &[ComplianceType], s: StructuralOutcome, gamma: f64) -> Block {
    let n = types.len();
    Block::new(
        types
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let bit = entry_bit(j, n);
                let values = (0..1usize << (2 * n))
                    .map(|idx| {
                        let (d, z) = (idx >> n, idx & ((1 << n) - 1));
                        let own = d & bit != 0;
                        let peers = (d & !bit).count_ones() as usize;
                        s.value(own, peers) + if z & bit != 0 { gamma } else { 0.0 }
                    })
                    .collect();
                Individual {
                    pt: t.treatment(),
                    outcome: OutcomeFunction::Table(OutcomeTable {
                        values,
                        z_dependent: true,
                    }),
                }
            })
            .collect(),
    )
}

fn compositions(types: &[ComplianceType]) -> Vec<Vec<ComplianceType>> {
    let mut out = Vec::new();
    for n in 2..=3usize {
        for code in 0..types.len().pow(n as u32) {
            let mut c = code;
            out.push(
                (0..n)
                    .map(|_| {
                        let t = types[c % types.len()];
                        c /= types.len();
                        t
                    })
                    .collect(),
            );
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let oracle = ExactEngine::enumerating();
    let phi = Mechanism::scalar("phi", 0.7).unwrap();
    let psi = Mechanism::scalar("psi", 0.3).unwrap();
    let grid = [
        StructuralOutcome { baseline: 0.0, direct: 1.0, peer: 0.5, interaction: 0.0, peer_sq: 0.0 },
        StructuralOutcome { baseline: 0.0, direct: 1.0, peer: 1.0, interaction: 0.5, peer_sq: 0.0 },
    ];

    let all = compositions(&[CO, AT, NT, DE]);
    let mut defier = None;
    'search: for s in &grid {
        for a in &all {
            for b in &all {
                if !a.iter().chain(b.iter()).any(|&t| t == DE) {
                    continue;
                }
                let pop = Population::new(
                    vec![structural_block(a, *s), structural_block(b, *s)],
                    Flags { monotone: false, one_sided: false, exclusion_ok: true },
                )
                .unwrap();
                let (Ok(t1), Ok(t2)) = (theorem_1_check(&oracle, &pop, &phi), theorem_2_check(&oracle, &pop, &psi, &phi))
                else {
                    continue;
                };
                if t1.gap.abs() >= 0.01 && t2.gap.abs() >= 0.01 {
                    defier = Some((pop, t1, t2));
                    break 'search;
                }
            }
        }
    }
    let Some((pop, t1, t2)) = defier else {
        return Err("no defier population with material gaps found".into());
    };
    ensure!(!t1.assumptions_hold && !t2.assumptions_hold, "defier population reported as monotone");
    let fast = ok(theorem_1_check(&ExactEngine::default(), &pop, &phi))?;
    ensure!((fast.gap - t1.gap).abs() <= 1e-10, "engines disagree on the defier gap");

    let monotone = compositions(&[CO, AT, NT]);
    let mut excl = None;
    'search: for gamma in [0.5, 1.0] {
        for a in &monotone {
            for b in &monotone {
                let blocks = vec![
                    exclusion_violating_block(a, grid[0], gamma),
                    exclusion_violating_block(b, grid[0], gamma),
                ];
                let pop = Population::new(blocks, Flags { monotone: true, one_sided: false, exclusion_ok: false }).unwrap();
                let Ok(t) = theorem_1_check(&oracle, &pop, &phi) else {
                    continue;
                };
                if t.gap.abs() >= 0.01 {
                    excl = Some(t);
                    break 'search;
                }
            }
        }
    }
    let Some(t3) = excl else {
        return Err("no exclusion-violating population with a material gap found".into());
    };
    ensure!(!t3.assumptions_hold, "exclusion violation not detected");
    Ok(format!(
        "defier gaps {:.4} / {:.4}; exclusion-violating gap {:.4}",
        t1.gap, t2.gap, t3.gap
    ))
}

fn criterion_5() -> Outcome {
    let cfg = dgp(20, BlockSize::Fixed(6), mix(0.2, 0.6, 0.2), interference(Representation::Mixed));
    let pop = ok(build_population(&cfg, &mut stream(505)))?;
    let design = DesignConfig::new(
        Mechanism::scalar("phi", 0.7).unwrap(),
        Mechanism::scalar("psi", 0.3).unwrap(),
        10,
        5050,
    );
    let s = ok(replicate(&ExactEngine::enumerating(), &pop, &design, 10_000))?;
    let mut parts = Vec::new();
    for name in ["ditt_hat", "pitt_hat_1", "pitt_hat_0"] {
        let e = s.get(name).ok_or(format!("{name} missing"))?;
        let z = e.standardized_bias.ok_or(format!("{name} has no standardized bias"))?;
        ensure!(e.undefined == 0, "{name} undefined in {} replications", e.undefined);
        ensure!(z <= 3.0, "{name}: standardized bias {z:.2}");
        parts.push(format!("{name} {z:.2}"));
    }
    Ok(format!("R=10000, standardized bias {}", parts.join(", ")))
}

/// Difference in means of `Y` (within the phi arm) over difference in means of `D` (all blocks).
fn wald(data: &ExperimentData) -> f64 {
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let pick = |z: bool, phi_only: bool, y: bool| {
        let mut v = Vec::new();
        for b in &data.blocks {
            if phi_only && !b.s {
                continue;
            }
            for j in 0..b.z.len() {
                if b.z[j] == z {
                    v.push(if y { b.y[j] } else { f64::from(u8::from(b.d[j])) });
                }
            }
        }
        v
    };
    (mean(pick(true, true, true)) - mean(pick(false, true, true))) / (mean(pick(true, false, false)) - mean(pick(false, false, false)))
}

fn criterion_6() -> Outcome {
    let outcome = OutcomeModel {
        direct: 2.0,
        baseline_sd: 1.5,
        ..Default::default()
    };
    let cfg = dgp(4, BlockSize::Fixed(4), mix(0.25, 0.5, 0.25), outcome);
    let pop = ok(build_population(&cfg, &mut stream(606)))?;
    let phi = Mechanism::scalar("phi", 0.5).unwrap();
    let psi = Mechanism::scalar("psi", 0.25).unwrap();
    let engine = ExactEngine::default();
    for z in [true, false] {
        let p = ok(engine.pitt(&pop, z, &phi, &psi))?;
        ensure!(
            p.population == 0.0 && p.blocks.iter().all(|&v| v == 0.0),
            "PITT({}) = {:?}",
            u8::from(z),
            p.blocks
        );
    }
    let design = DesignConfig::new(phi.clone(), psi, 2, 6060);
    let (mut checked, mut undefined, mut worst) = (0usize, 0usize, 0.0f64);
    for r in 0..50_000u64 {
        let data = ok(run_design_replicate(&pop, &design, r))?;
        if !data.blocks.iter().all(|b| b.z.iter().filter(|&&z| z).count() == 2) {
            continue;
        }
        let oracle = wald(&data);
        let est = match ldt_hat(&data, &phi) {
            Ok(v) => v,
            Err(e) => {
                ensure!(!oracle.is_finite(), "replicate {r}: {e} but the Wald ratio is {oracle}");
                undefined += 1;
                continue;
            }
        };
        ensure!(
            (est - oracle).abs() <= 1e-10,
            "replicate {r}: ldt_hat {est} vs Wald {oracle}"
        );
        worst = worst.max((est - oracle).abs());
        checked += 1;
    }
    ensure!(checked >= 100, "only {checked} balanced realizations");
    Ok(format!(
        "PITT(1) = PITT(0) = 0 exactly; ldt_hat equals the Wald ratio on {checked} balanced realizations (max gap {worst:.1e}), both undefined on {undefined}"
    ))
}

fn criterion_7() -> Outcome {
    let fast = ExactEngine::default();
    let oracle = ExactEngine::enumerating();
    let mut rng = stream(707);
    let (mut compared, mut worst) = (0usize, 0.0f64);
    for k in 0..50 {
        let blocks = rng.random_range(2..=8);
        let cfg = dgp(
            blocks,
            BlockSize::Range { min: 1, max: 10 },
            random_strata(&mut rng),
            interference(Representation::Structural),
        );
        let pop = ok(build_population(&cfg, &mut rng))?;
        let phi = hetero_mech("phi", &pop, &mut rng);
        let psi = hetero_mech("psi", &pop, &mut rng);
        let a = ok(estimand_report(&fast, &pop, &phi, &psi))?;
        let b = ok(estimand_report(&oracle, &pop, &phi, &psi))?;
        ensure!(a.entries.len() == b.entries.len(), "population {k}: different estimand sets");
        ensure!(a.enumeration.iter().all(|e| e.assignments_per_average == 0), "population {k}: convolution not used");
        for (x, y) in a.entries.iter().zip(&b.entries) {
            ensure!(x.family == y.family && x.label == y.label, "population {k}: estimand order differs");
            ensure!(within(&x.values, &y.values, 1e-10), "population {k}: {} {} differs", x.family, x.label);
            worst = x
                .values
                .blocks
                .iter()
                .zip(&y.values.blocks)
                .map(|(p, q)| (p - q).abs())
                .fold(worst.max((x.values.population - y.values.population).abs()), f64::max);
            compared += 1;
        }
    }
    Ok(format!("50 populations, {compared} estimands, max gap {worst:.1e}"))
}

fn criterion_8() -> Outcome {
    let types = [CO, CO, AT, NT];
    let block = Block::new(
        types
            .iter()
            .enumerate()
            .map(|(k, t)| Individual {
                pt: t.treatment(),
                outcome: OutcomeFunction::Structural(StructuralOutcome {
                    baseline: 3.0 * (((k + 1) * 7 % 5) as f64 - 2.0),
                    direct: 2.0,
                    peer: 0.5,
                    ..Default::default()
                }),
            })
            .collect(),
    );
    let mut biases = Vec::new();
    for b in [10usize, 50, 200] {
        let pop = ok(Population::new(
            vec![block.clone(); b],
            Flags { monotone: true, one_sided: false, exclusion_ok: true },
        ))?;
        let design = DesignConfig::new(
            Mechanism::scalar("phi", 0.5).unwrap(),
            Mechanism::scalar("psi", 0.3).unwrap(),
            b / 2,
            808,
        );
        let s = ok(replicate(&ExactEngine::default(), &pop, &design, 5_000))?;
        let e = s.get("ldt_hat").ok_or("ldt_hat missing")?;
        let (mean, target) = (e.mean.ok_or("no mean")?, e.target.ok_or("no target")?);
        biases.push((b, (mean - target).abs(), e.mcse.unwrap_or(f64::NAN)));
    }
    let text = biases
        .iter()
        .map(|(b, bias, se)| format!("B={b}: |bias| {bias:.4} (mcse {se:.4})"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(biases[0].1 > biases[1].1 && biases[1].1 > biases[2].1, "bias not strictly decreasing: {text}");
    Ok(text)
}

fn criterion_9() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/monotone.json");
    let text = ok(std::fs::read_to_string(&path))?;
    let artifacts = |threads: usize| -> Result<Vec<String>, String> {
        let mut cfg = ok(RunConfig::from_json(&text))?;
        cfg.mc.replications = 200;
        let out = with_threads(Some(threads), || -> peerenc_core::Result<Vec<String>> {
            let pop = cfg.build_population()?;
            let d = cfg.design_config()?;
            let engine = cfg.engine();
            let data = run_design(&pop, &d)?;
            Ok(vec![
                pop.to_json()?,
                data.to_csv()?,
                estimand_report(&engine, &pop, &d.mech_a, &d.mech_b)?.to_json()?,
                estimate(&data, &d.mech_a, &d.mech_b)?.to_json()?,
                replicate(&engine, &pop, &d, cfg.mc.replications)?.to_csv()?,
                replicate(&engine, &pop, &d, cfg.mc.replications)?.to_json()?,
                verify_theorems(&engine, &pop, &d, cfg.mc.replications)?.to_json()?,
            ])
        });
        ok(ok(out)?)
    };
    let reference = artifacts(1)?;
    for threads in [2, 4, 8] {
        let other = artifacts(threads)?;
        for (k, (a, b)) in reference.iter().zip(&other).enumerate() {
            ensure!(a == b, "artifact {k} differs between 1 and {threads} threads");
        }
    }
    let again = artifacts(1)?;
    ensure!(again == reference, "repeat run differs");
    Ok(format!(
        "{} artifacts byte-identical across 1, 2, 4 and 8 threads and repeated runs",
        reference.len()
    ))
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "DITT/ET equals complier LDT", limit: Some(Duration::from_secs(60)), run: criterion_1 },
        Criterion { id: 2, name: "PITT contrast/ET equals complier LPT contrast", limit: Some(Duration::from_secs(60)), run: criterion_2 },
        Criterion { id: 3, name: "PITT equals LPT when one side is fixed", limit: Some(Duration::from_secs(30)), run: criterion_3 },
        Criterion { id: 4, name: "identities fail without monotonicity or exclusion", limit: None, run: criterion_4 },
        Criterion { id: 5, name: "ITT estimators unbiased", limit: Some(Duration::from_secs(120)), run: criterion_5 },
        Criterion { id: 6, name: "no-interference reduction", limit: None, run: criterion_6 },
        Criterion { id: 7, name: "convolution equals enumeration", limit: None, run: criterion_7 },
        Criterion { id: 8, name: "ldt_hat bias shrinks with B", limit: Some(Duration::from_secs(300)), run: criterion_8 },
        Criterion { id: 9, name: "determinism across threads", limit: None, run: criterion_9 },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.1?}, limit {limit:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{}] {}: {detail} ({:.1}s)", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
