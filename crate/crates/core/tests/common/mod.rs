use std::path::Path;

pub const SMALL_TOML: &str = r#"
seed = 7

[synth]
vocab_words = 6
num_speakers = 10
feat_dim = 8
profile_dim = 6
train_size = 24
dev_size = 12
test_size = 12

[model]
enc_dim = 8
dec_dim = 8
embed_dim = 4
att_dim = 6
out_dim = 8

[mmi]
epochs = 2
batch_size = 4

[mbr]
epochs = 1
batch_size = 4

[beam]
beam_size = 4
nbest_size = 2

[gradcheck]
instances = 3
"#;

/// Write the small configuration into `dir` and return its path.
pub fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL_TOML).unwrap();
    path
}
