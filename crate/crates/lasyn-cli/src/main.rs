fn main() {
    println!("lasyn");
}
