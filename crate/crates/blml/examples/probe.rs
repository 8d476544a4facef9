//! Scratch probe: emits cif fixture CSVs for a seed so candidate seeds
//! can be screened through the command-line pipeline.

use blml::pointprocess::{reflected_walk_track, simulate_from_intensity};
use blml::seeding::derive_rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args[1].parse().unwrap();
    let dir = &args[2];

    let mut rng = derive_rng(seed, &[0]);
    let track = reflected_walk_track(0.0, 0.01, 5001, 0.0, 1.0, 0.3, 0.98, &mut rng).unwrap();
    let times: Vec<f64> = (0..track.len()).map(|i| track.time(i)).collect();
    let intensity: Vec<f64> = (0..track.len())
        .map(|i| {
            let x = track.row(i)[0];
            5.0 + 35.0 * x * x
        })
        .collect();
    let spikes = simulate_from_intensity(&times, &intensity, &mut rng).unwrap();

    let mut covar = String::from("t,x\n");
    for i in 0..track.len() {
        covar.push_str(&format!("{},{}\n", track.time(i), track.row(i)[0]));
    }
    std::fs::write(format!("{dir}/covar.csv"), covar).unwrap();
    let mut sp = String::from("t\n");
    for t in spikes.times() {
        sp.push_str(&format!("{t}\n"));
    }
    std::fs::write(format!("{dir}/spikes.csv"), sp).unwrap();
    println!("seed {seed}: {} events", spikes.len());
}
