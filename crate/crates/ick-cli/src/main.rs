fn main() {
    println!("ick");
}
