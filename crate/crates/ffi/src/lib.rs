//! C ABI for sitewalk.
//!
//! Every fallible call returns an [`SwStatus`]; on failure the message is
//! available from [`sw_last_error`] on the same thread. Strings handed out
//! by the library must be released with [`sw_string_free`], handles with
//! their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sitewalk::action::{parse_call, Action};
use sitewalk::agent::parse_action;
use sitewalk::config::{ConfigError, Overrides, RunConfig};
use sitewalk::datastore::{compute_stats_file, export_sft};
use sitewalk::simenv::{load_site_spec, load_site_spec_file, SiteOracle, SiteSpec};
use sitewalk::urls::{canonicalize_url, url_path_depth};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed URL, action or agent output.
    ParseError = 3,
    /// Site specification failed to load.
    SpecError = 4,
    ConfigError = 5,
    ProviderError = 6,
    DataError = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

/// A loaded site specification.
pub struct SwSite {
    spec: SiteSpec,
}

/// A run configuration with command-line style overrides applied.
pub struct SwConfig {
    config: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Failure = (SwStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SwStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SwStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((SwStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SwStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((SwStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread; do not free.
#[no_mangle]
pub extern "C" fn sw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn sw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a site specification from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_site_load(toml: *const c_char, out: *mut *mut SwSite) -> SwStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        out_ptr(out, "out")?;
        let spec = load_site_spec(text.as_bytes()).map_err(|e| (SwStatus::SpecError, e.to_string()))?;
        *out = Box::into_raw(Box::new(SwSite { spec }));
        Ok(())
    })
}

/// Loads a site specification file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_site_load_file(path: *const c_char, out: *mut *mut SwSite) -> SwStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        out_ptr(out, "out")?;
        let spec = load_site_spec_file(Path::new(p)).map_err(|e| (SwStatus::SpecError, e.to_string()))?;
        *out = Box::into_raw(Box::new(SwSite { spec }));
        Ok(())
    })
}

/// # Safety
/// `site` must come from `sw_site_load*` and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn sw_site_free(site: *mut SwSite) {
    if !site.is_null() {
        drop(Box::from_raw(site));
    }
}

/// Number of pages reachable by clicking from the site root.
///
/// # Safety
/// `site` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_site_reachable_pages(site: *const SwSite, out: *mut usize) -> SwStatus {
    guard(|| {
        let site = site.as_ref().ok_or((SwStatus::NullArgument, "site is null".to_string()))?;
        out_ptr(out, "out")?;
        *out = SiteOracle::new(&site.spec).reachable_urls().len();
        Ok(())
    })
}

/// Site id as a new string.
///
/// # Safety
/// `site` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_site_id(site: *const SwSite, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        let site = site.as_ref().ok_or((SwStatus::NullArgument, "site is null".to_string()))?;
        out_ptr(out, "out")?;
        *out = into_c(site.spec.site_id.clone());
        Ok(())
    })
}

/// Canonical form of a URL.
///
/// # Safety
/// `url` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_canonicalize_url(url: *const c_char, out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        let raw = str_arg(url, "url")?;
        out_ptr(out, "out")?;
        let c = canonicalize_url(raw).map_err(|e| (SwStatus::ParseError, e.to_string()))?;
        *out = into_c(c.to_string());
        Ok(())
    })
}

/// Number of non-empty path segments of a URL.
///
/// # Safety
/// `url` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_url_path_depth(url: *const c_char, out: *mut usize) -> SwStatus {
    guard(|| {
        let raw = str_arg(url, "url")?;
        out_ptr(out, "out")?;
        let c = canonicalize_url(raw).map_err(|e| (SwStatus::ParseError, e.to_string()))?;
        *out = url_path_depth(&c);
        Ok(())
    })
}

/// Parses an agent reply into its action, rendered in call syntax, and the
/// thought. Either output pointer may be null if unwanted.
///
/// # Safety
/// `output` must be a NUL-terminated string; non-null outputs must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sw_parse_agent_output(
    output: *const c_char,
    action_out: *mut *mut c_char,
    thought_out: *mut *mut c_char,
) -> SwStatus {
    guard(|| {
        let text = str_arg(output, "output")?;
        let (thought, action) = parse_action(text).map_err(|e| (SwStatus::ParseError, e.to_string()))?;
        if !action_out.is_null() {
            *action_out = into_c(action.render());
        }
        if !thought_out.is_null() {
            *thought_out = into_c(thought);
        }
        Ok(())
    })
}

/// Normalizes an action call such as `click( "12" )` to its canonical
/// rendering, and returns its JSON form when `json_out` is non-null.
///
/// # Safety
/// `call` must be a NUL-terminated string; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_normalize_action(
    call: *const c_char,
    rendered_out: *mut *mut c_char,
    json_out: *mut *mut c_char,
) -> SwStatus {
    guard(|| {
        let text = str_arg(call, "call")?;
        let action: Action = parse_call(text).map_err(|e| (SwStatus::ParseError, e.to_string()))?;
        if !rendered_out.is_null() {
            *rendered_out = into_c(action.render());
        }
        if !json_out.is_null() {
            let json = serde_json::to_string(&action).map_err(|e| (SwStatus::ParseError, e.to_string()))?;
            *json_out = into_c(json);
        }
        Ok(())
    })
}

fn config_failure(e: ConfigError) -> Failure {
    match e {
        ConfigError::Provider { .. } => (SwStatus::ProviderError, e.to_string()),
        _ => (SwStatus::ConfigError, e.to_string()),
    }
}

/// Loads and validates a `run.toml`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sw_config_load(path: *const c_char, out: *mut *mut SwConfig) -> SwStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        out_ptr(out, "out")?;
        let mut config = RunConfig::load(Path::new(p)).map_err(config_failure)?;
        config.apply(&Overrides::default());
        config.validate().map_err(config_failure)?;
        *out = Box::into_raw(Box::new(SwConfig { config }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from `sw_config_load` and not be freed twice. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn sw_config_free(config: *mut SwConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Overrides seed and determinism; a null `output_dir` keeps the configured
/// one.
///
/// # Safety
/// `config` must be a live handle; `output_dir` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sw_config_override(
    config: *mut SwConfig,
    seed: u64,
    deterministic: bool,
    output_dir: *const c_char,
) -> SwStatus {
    guard(|| {
        let c = config.as_mut().ok_or((SwStatus::NullArgument, "config is null".to_string()))?;
        let output_dir = if output_dir.is_null() {
            None
        } else {
            Some(str_arg(output_dir, "output_dir")?.into())
        };
        c.config.apply(&Overrides {
            seed: Some(seed),
            deterministic,
            workers: None,
            output_dir,
        });
        Ok(())
    })
}

/// Runs exploration and returns the dataset path.
///
/// # Safety
/// `config` must be a live handle; `dataset_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sw_explore(config: *const SwConfig, dataset_out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        let c = config.as_ref().ok_or((SwStatus::NullArgument, "config is null".to_string()))?;
        out_ptr(dataset_out, "dataset_out")?;
        let (path, _) = sitewalk::cli::explore(&c.config).map_err(|e| {
            let status = match sitewalk::cli::exit_code(&e) {
                2 => SwStatus::ConfigError,
                3 => SwStatus::ProviderError,
                _ => SwStatus::DataError,
            };
            (status, format!("{e:#}"))
        })?;
        *dataset_out = into_c(path.to_string_lossy().into_owned());
        Ok(())
    })
}

/// Dataset statistics as a JSON document.
///
/// # Safety
/// `dataset` must be a NUL-terminated string; `json_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sw_dataset_stats(dataset: *const c_char, json_out: *mut *mut c_char) -> SwStatus {
    guard(|| {
        let p = str_arg(dataset, "dataset")?;
        out_ptr(json_out, "json_out")?;
        let stats = compute_stats_file(Path::new(p)).map_err(|e| (SwStatus::DataError, e.to_string()))?;
        let json = serde_json::to_string(&stats).map_err(|e| (SwStatus::DataError, e.to_string()))?;
        *json_out = into_c(json);
        Ok(())
    })
}

/// Writes fine-tuning examples and reports how many.
///
/// # Safety
/// Paths must be NUL-terminated strings; `count_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sw_export_sft(
    dataset: *const c_char,
    destination: *const c_char,
    count_out: *mut usize,
) -> SwStatus {
    guard(|| {
        let src = str_arg(dataset, "dataset")?;
        let dst = str_arg(destination, "destination")?;
        out_ptr(count_out, "count_out")?;
        *count_out = export_sft(Path::new(src), Path::new(dst)).map_err(|e| (SwStatus::DataError, e.to_string()))?;
        Ok(())
    })
}
