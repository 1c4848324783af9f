use std::env;
use std::fs;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).expect("cbindgen.toml");
    let header = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("unable to generate C bindings");

    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("mspr.h");
    header.write_to_file(&out);

    // keep the checked-in copy current without touching it when unchanged
    let fresh = fs::read(&out).unwrap();
    let installed = crate_dir.join("include").join("mspr.h");
    if fs::read(&installed).ok().as_deref() != Some(&fresh[..]) {
        let _ = fs::create_dir_all(installed.parent().unwrap());
        let _ = fs::write(&installed, &fresh);
    }
}
