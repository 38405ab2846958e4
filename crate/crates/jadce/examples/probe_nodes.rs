use jadce::exact::{bnb_solve, compute_beta, ExactStatus, MiqcpInstance};
use jadce::model::generate_scenario;
use std::time::Instant;

fn main() {
    for l in [2usize, 3, 4, 5] {
        let start = Instant::now();
        let mut nodes = 0usize;
        let mut optimal = 0usize;
        for seed in 0..20u64 {
            let sc = generate_scenario(30, 2, l, 5, None, seed).unwrap();
            let beta = compute_beta(&sc.pilots, &sc.observation, 0.0);
            let inst = MiqcpInstance::from_complex(&sc.pilots, &sc.observation, 0.0, beta).unwrap();
            let res = bnb_solve(&inst, 200_000).unwrap();
            nodes += res.nodes_explored;
            optimal += (res.status == ExactStatus::Optimal) as usize;
        }
        println!(
            "L={l}: mean nodes {} optimal {}/20 wall {:?} ({:?}/trial)",
            nodes / 20, optimal, start.elapsed(), start.elapsed() / 20
        );
    }
}
