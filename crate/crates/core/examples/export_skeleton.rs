//! Regenerates `assets/skeleton_v1.json` from the built-in rest geometry.

fn main() {
    let tree = hamos_core::skeleton::KinematicTree::build_default();
    println!("{}", tree.to_json());
}
