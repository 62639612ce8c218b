use ipc_lab::conventions::Conventions;
use ipc_lab::offspring::{Offspring, OffspringSpec};
use ipc_lab::percolation::PercolationCurve;
use ipc_lab::rng::battery_rng;
use ipc_lab::structural::{simulate_cluster, SimOptions};
use std::sync::Arc;

fn main() {
    let off = Arc::new(Offspring::new(OffspringSpec::Sibuya { alpha: 0.25 }).unwrap());
    let curve = PercolationCurve::with_defaults(off.clone()).unwrap();
    let conventions = Conventions::default();
    let opts = SimOptions::default();
    let mut rng = battery_rng(30, 10);
    for rep in 0..300 {
        let path = simulate_cluster(&off, &curve, 12, &conventions, &opts, &mut rng).unwrap();
        let mut prev_c = 0.0;
        for (k, level) in path.levels.iter().enumerate() {
            if !(path.c[k] >= prev_c) {
                println!("rep {rep} k {k}: c={} prev={} forest={} beta={} w={} kept={} deg={} approx={}",
                    path.c[k], prev_c, level.forest_weight, path.beta[k], level.w, level.kept, level.degree, level.approx);
            }
            prev_c = path.c[k];
        }
    }
    println!("done");
}
