#![no_main]

use jointspace::cli::{LangSpec, PairSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(pair) = PairSpec::parse(spec) {
        assert_ne!(pair.source_lang, pair.target_lang);
        assert!(!pair.source_file.as_os_str().is_empty());
        assert!(!pair.target_file.as_os_str().is_empty());
    }
    if let Ok(lang) = LangSpec::parse(spec, "--word") {
        assert!(!lang.value.is_empty());
        assert!(!lang.language.contains(':'));
    }
});
