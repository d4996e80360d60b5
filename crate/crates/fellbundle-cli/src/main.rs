fn main() {
    println!("fellbundle");
}
