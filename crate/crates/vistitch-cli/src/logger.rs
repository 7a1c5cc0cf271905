//! Leveled stderr logging without a logging dependency. The level is
//! process-global and set once from the loaded config.

use std::sync::atomic::{AtomicU8, Ordering};

use crate::config::LogLevel;

static LEVEL: AtomicU8 = AtomicU8::new(3); // Info until configured.

fn rank(level: LogLevel) -> u8 {
    match level {
        LogLevel::Off => 0,
        LogLevel::Error => 1,
        LogLevel::Warn => 2,
        LogLevel::Info => 3,
        LogLevel::Debug => 4,
    }
}

pub fn set_level(level: LogLevel) {
    LEVEL.store(rank(level), Ordering::Relaxed);
}

pub fn enabled(level: LogLevel) -> bool {
    rank(level) <= LEVEL.load(Ordering::Relaxed) && level != LogLevel::Off
}

fn emit(level: LogLevel, msg: &str) {
    if enabled(level) {
        eprintln!("[{level}] {msg}");
    }
}

pub fn error(msg: &str) {
    emit(LogLevel::Error, msg);
}

pub fn warn(msg: &str) {
    emit(LogLevel::Warn, msg);
}

pub fn info(msg: &str) {
    emit(LogLevel::Info, msg);
}

pub fn debug(msg: &str) {
    emit(LogLevel::Debug, msg);
}
