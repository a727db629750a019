//! Writes a directory of procedural well-exposed scenes, handy as source
//! imagery for `pretinex synth` when no photo collection is at hand.
//!
//! Usage: cargo run --release --example make_scenes -- <dir> [count] [size] [seed]

use pretinex::synth::scenes::write_scene_dir;
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let dir: PathBuf = args.next().unwrap_or_else(|| "scenes".into()).into();
    let count: usize = args.next().and_then(|v| v.parse().ok()).unwrap_or(20);
    let size: usize = args.next().and_then(|v| v.parse().ok()).unwrap_or(256);
    let seed: u64 = args.next().and_then(|v| v.parse().ok()).unwrap_or(1);
    match write_scene_dir(&dir, count, size, size, seed) {
        Ok(paths) => println!("wrote {} scenes to {}", paths.len(), dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(3);
        }
    }
}
