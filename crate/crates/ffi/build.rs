use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let header = PathBuf::from(&crate_dir).join("include").join("nlcf.h");
    std::fs::create_dir_all(header.parent().unwrap()).expect("include dir");
    println!("cargo:rerun-if-changed=src/lib.rs");
    let config = cbindgen::Config {
        enumeration: cbindgen::EnumConfig {
            prefix_with_name: true,
            rename_variants: cbindgen::RenameRule::ScreamingSnakeCase,
            ..Default::default()
        },
        ..Default::default()
    };
    cbindgen::Builder::new()
        .with_config(config)
        .with_crate(crate_dir)
        .with_language(cbindgen::Language::C)
        .with_include_guard("NLCF_H")
        .with_cpp_compat(true)
        .generate()
        .expect("unable to generate bindings")
        .write_to_file(header);
}
