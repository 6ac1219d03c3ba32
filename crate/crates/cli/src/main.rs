fn main() {
    let (a, b, c) = exflow_core::probe::smoke();
    println!("probe: {a} {b} {c}");
}
