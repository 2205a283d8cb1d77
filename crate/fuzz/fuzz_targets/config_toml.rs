#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = hsvp::io::RunConfig::from_toml_str(text) {
            // anything that parses must also validate or fail cleanly
            let _ = cfg.steady_config().map(|s| s.validate());
            let _ = cfg.t_end();
        }
    }
});
