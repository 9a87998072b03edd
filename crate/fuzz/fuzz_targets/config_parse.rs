#![no_main]

use libfuzzer_sys::fuzz_target;
use retromfg_cli::parse_config_str;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        // The last line doubles as an override so the dotted-path code is reached too.
        let (body, last) = src.rsplit_once('\n').unwrap_or((src, ""));
        let _ = parse_config_str(src, &[]);
        if last.contains('=') {
            let _ = parse_config_str(body, &[last.to_string()]);
        }
    }
});
