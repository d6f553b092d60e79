fn main() {
    println!("repstab");
}
