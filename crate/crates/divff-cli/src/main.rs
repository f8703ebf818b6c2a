fn main() { println!("divff"); }
