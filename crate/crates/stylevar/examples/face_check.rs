use stylevar::toyface::*;
fn main() {
    let (images, _) = generate_toy_dataset(8, 123);
    for (i, im) in images.iter().enumerate() {
        im.to_png(std::path::Path::new(&format!("/tmp/faces/f{i}.png"))).unwrap();
    }
    // 4x upscaled grid for inspection
    let mut spec = ToyFaceSpec::neutral();
    spec.mouth_open = 1.0; spec.eyeglasses = 1.0; spec.earring = 1.0;
    render_sized(&spec, 128).to_png(std::path::Path::new("/tmp/faces/big.png")).unwrap();
}
