//! Scratch harness for tuning the desk-scale learning test: trains one
//! seed of the full model and the no-confidence ablation on the synthetic
//! split and prints validation curves plus test MRR.

use fitcarl::config::TrainConfig;
use fitcarl::episodes::{load_split, MetaSplit};
use fitcarl::eval::evaluate;
use fitcarl::model::{init_params, AblationFlags};
use fitcarl::pretrain::{pretrain, PretrainConfig};
use fitcarl::synth::{write_synthetic, SynthSpec};
use fitcarl::train::meta_train;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |key: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == key)
            .map(|i| args[i + 1].parse().unwrap())
            .unwrap_or(default)
    };
    let mut spec = SynthSpec::default();
    spec.noise_facts = get("--noise", 400.0) as usize;
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(dir.path(), &spec).unwrap();
    let split = load_split(dir.path()).unwrap();

    let mut cfg = TrainConfig::default();
    cfg.d = get("--d", 16.0) as usize;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.shots = 1;
    cfg.steps = 3;
    cfg.gamma = 0.95;
    cfg.eta = get("--eta", 0.1);
    cfg.theta = get("--theta", 0.5);
    cfg.action_cap = get("--cap", 10.0) as usize;
    cfg.episodes = get("--episodes", 500.0) as usize;
    cfg.lr = get("--lr", 3e-3);
    cfg.beam = 64;
    cfg.eval_every = get("--every", 50.0) as usize;
    cfg.seed = get("--seed", 1.0) as u64;
    let cfg = cfg;

    for codes in [&[][..], &["B"][..]] {
        let mut run = cfg.clone();
        run.ablations = AblationFlags::from_codes(codes).unwrap();
        let label = if codes.is_empty() { "full" } else { "no-conf" };
        let out = meta_train(&split, &run, None).unwrap();
        let curve: Vec<String> = out
            .curve
            .iter()
            .filter_map(|p| p.valid_mrr.map(|v| format!("{}:{v:.3}", p.episode)))
            .collect();
        let best = evaluate(&split, &out.best.params, &run, MetaSplit::Test, &[11, 12]).unwrap();
        let last = evaluate(&split, &out.last.params, &run, MetaSplit::Test, &[11, 12]).unwrap();
        println!(
            "{label:8} seed {} valid [{}] test best {:.4} last {:.4}",
            run.seed,
            curve.join(" "),
            best.mrr,
            last.mrr
        );
    }
}
