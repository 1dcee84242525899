//! Live tracing of a make run with ptrace (Linux, x86_64).
//!
//! The traced child installs a seccomp filter that stops it only at the
//! file-related system calls we care about; every other call runs at full
//! speed. If the filter cannot be installed the tracer falls back to
//! stopping at every system call entry and exit.

use std::collections::HashMap;
use std::ffi::CString;
use std::fs::{self, File};
use std::io::{IoSliceMut, Read, Seek, SeekFrom};
use std::os::fd::AsRawFd;
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};

use nix::errno::Errno;
use nix::sys::ptrace::{self, Event, Options};
use nix::sys::signal::Signal;
use nix::sys::uio::{process_vm_readv, RemoteIoVec};
use nix::sys::wait::{waitpid, WaitPidFlag, WaitStatus};
use nix::unistd::Pid;

use super::{BuildTrace, Op, TraceError, TraceEvent};
use crate::path::clean_abs;

const AUDIT_ARCH_X86_64: u32 = 0xC000_003E;
const PR_SET_NO_NEW_PRIVS: libc::c_int = 38;
const PR_SET_SECCOMP: libc::c_int = 22;
const AT_FDCWD: i32 = -100;

const TRACED: [libc::c_long; 15] = [
    libc::SYS_open,
    libc::SYS_openat,
    libc::SYS_openat2,
    libc::SYS_creat,
    libc::SYS_rename,
    libc::SYS_renameat,
    libc::SYS_renameat2,
    libc::SYS_unlink,
    libc::SYS_unlinkat,
    libc::SYS_symlink,
    libc::SYS_symlinkat,
    libc::SYS_link,
    libc::SYS_linkat,
    libc::SYS_execve,
    libc::SYS_execveat,
];

fn bpf_stmt(code: u32, k: u32) -> libc::sock_filter {
    libc::sock_filter { code: code as u16, jt: 0, jf: 0, k }
}

fn bpf_jump(code: u32, k: u32, jt: u8, jf: u8) -> libc::sock_filter {
    libc::sock_filter { code: code as u16, jt, jf, k }
}

fn seccomp_program() -> Vec<libc::sock_filter> {
    let ld = libc::BPF_LD | libc::BPF_W | libc::BPF_ABS;
    let jeq = libc::BPF_JMP | libc::BPF_JEQ | libc::BPF_K;
    let ret = libc::BPF_RET | libc::BPF_K;
    let n = TRACED.len();
    let mut f = vec![
        bpf_stmt(ld, 4), // seccomp_data.arch
        bpf_jump(jeq, AUDIT_ARCH_X86_64, 1, 0),
        bpf_stmt(ret, libc::SECCOMP_RET_ALLOW),
        bpf_stmt(ld, 0), // seccomp_data.nr
    ];
    for (i, nr) in TRACED.iter().enumerate() {
        f.push(bpf_jump(jeq, *nr as u32, (n - i) as u8, 0));
    }
    f.push(bpf_stmt(ret, libc::SECCOMP_RET_ALLOW));
    f.push(bpf_stmt(ret, libc::SECCOMP_RET_TRACE));
    f
}

enum Pending {
    Open { path: String, op: Op },
    Rename { from: String, to: String },
    Unlink { path: String },
    Link { target: String, link: String },
    Exec { path: String, argv: String },
}

struct Tracer {
    seccomp: bool,
    root: i32,
    seq: u64,
    events: Vec<TraceEvent>,
    parent: HashMap<i32, i32>,
    pending: HashMap<i32, Pending>,
    in_syscall: HashMap<i32, bool>,
}

pub(super) fn trace_command(root: &Path, argv: &[String]) -> Result<BuildTrace, TraceError> {
    let root = root.canonicalize().map_err(|e| TraceError::io(format!("resolving {}", root.display()), e))?;
    let want_seccomp = std::env::var("DEPSENTRY_TRACE_MODE").map(|v| v != "syscall").unwrap_or(true);

    let cwd = CString::new(root.as_os_str().as_bytes()).map_err(|_| TraceError::TracerUnavailable("project path contains NUL".into()))?;
    let cargs: Vec<CString> = argv
        .iter()
        .map(|a| CString::new(a.as_bytes()))
        .collect::<Result<_, _>>()
        .map_err(|_| TraceError::TracerUnavailable("make argument contains NUL".into()))?;
    let mut cptrs: Vec<*const libc::c_char> = cargs.iter().map(|c| c.as_ptr()).collect();
    cptrs.push(std::ptr::null());
    let mut out = tempfile::tempfile().map_err(|e| TraceError::io("creating build log", e))?;
    let mut err = tempfile::tempfile().map_err(|e| TraceError::io("creating build log", e))?;
    let devnull = File::open("/dev/null").map_err(|e| TraceError::io("opening /dev/null", e))?;
    let filter = seccomp_program();
    let prog = libc::sock_fprog { len: filter.len() as u16, filter: filter.as_ptr() as *mut libc::sock_filter };
    let mut fds = [0i32; 2];
    if unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) } != 0 {
        return Err(TraceError::io("creating pipe", std::io::Error::last_os_error()));
    }
    let (rd, wr) = (fds[0], fds[1]);

    let child = unsafe { libc::fork() };
    if child < 0 {
        return Err(TraceError::io("fork", std::io::Error::last_os_error()));
    }
    if child == 0 {
        // Only async-signal-safe calls from here on.
        unsafe {
            libc::close(rd);
            let report = |b: u8| {
                libc::write(wr, &b as *const u8 as *const libc::c_void, 1);
            };
            if libc::chdir(cwd.as_ptr()) != 0 {
                report(b'D');
                libc::_exit(126);
            }
            libc::dup2(devnull.as_raw_fd(), 0);
            libc::dup2(out.as_raw_fd(), 1);
            libc::dup2(err.as_raw_fd(), 2);
            libc::setpgid(0, 0);
            if libc::ptrace(libc::PTRACE_TRACEME, 0, 0, 0) != 0 {
                report(b'E');
                libc::_exit(127);
            }
            let mut mode = b'P';
            if want_seccomp
                && libc::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) == 0
                && libc::prctl(PR_SET_SECCOMP, libc::SECCOMP_MODE_FILTER, &prog as *const libc::sock_fprog) == 0
            {
                mode = b'S';
            }
            report(mode);
            libc::close(wr);
            libc::raise(libc::SIGSTOP);
            libc::execvp(cptrs[0], cptrs.as_ptr());
            libc::_exit(127);
        }
    }
    unsafe { libc::close(wr) };
    let mut pipe = unsafe { <File as std::os::fd::FromRawFd>::from_raw_fd(rd) };
    let mut mode = [0u8; 1];
    let got = pipe.read(&mut mode).unwrap_or(0);
    drop(pipe);
    let pid = Pid::from_raw(child);
    if got == 0 || mode[0] == b'E' || mode[0] == b'D' {
        let _ = waitpid(pid, None);
        return Err(TraceError::TracerUnavailable(match mode[0] {
            b'D' => format!("cannot enter {}", root.display()),
            _ => "ptrace is not permitted here (check kernel.yama.ptrace_scope or the container's seccomp profile)".into(),
        }));
    }
    match waitpid(pid, Some(WaitPidFlag::__WALL)) {
        Ok(WaitStatus::Stopped(_, Signal::SIGSTOP)) => {}
        other => {
            return Err(TraceError::TracerUnavailable(format!("traced child did not stop as expected: {other:?}")));
        }
    }
    let seccomp = mode[0] == b'S';
    let mut opts = Options::PTRACE_O_TRACESYSGOOD
        | Options::PTRACE_O_TRACEFORK
        | Options::PTRACE_O_TRACEVFORK
        | Options::PTRACE_O_TRACECLONE
        | Options::PTRACE_O_TRACEEXEC
        | Options::PTRACE_O_EXITKILL;
    if seccomp {
        opts |= Options::PTRACE_O_TRACESECCOMP;
    }
    if let Err(e) = ptrace::setoptions(pid, opts) {
        let _ = nix::sys::signal::kill(pid, Signal::SIGKILL);
        let _ = waitpid(pid, None);
        return Err(TraceError::TracerUnavailable(format!("PTRACE_SETOPTIONS failed: {e}")));
    }
    let mut t = Tracer {
        seccomp,
        root: child,
        seq: 0,
        events: Vec::new(),
        parent: HashMap::new(),
        pending: HashMap::new(),
        in_syscall: HashMap::new(),
    };
    t.parent.insert(child, std::process::id() as i32);
    t.resume(pid, None);
    let status = t.run();

    if status != 0 {
        let mut tail = String::new();
        for f in [&mut out, &mut err] {
            let mut s = String::new();
            let _ = f.seek(SeekFrom::Start(0));
            let _ = f.read_to_string(&mut s);
            tail.push_str(&s);
        }
        let lines: Vec<&str> = tail.lines().collect();
        let start = lines.len().saturating_sub(30);
        return Err(TraceError::BuildFailed { status, stderr_tail: lines[start..].join("\n") });
    }
    Ok(BuildTrace { project_root: root, events: t.events })
}

impl Tracer {
    fn run(&mut self) -> i32 {
        let group = Pid::from_raw(-self.root);
        let mut root_status = -1;
        loop {
            let st = match waitpid(group, Some(WaitPidFlag::__WALL)) {
                Ok(s) => s,
                Err(Errno::EINTR) => continue,
                Err(_) => break,
            };
            match st {
                WaitStatus::PtraceEvent(pid, _, ev) => {
                    let p = pid.as_raw();
                    if ev == Event::PTRACE_EVENT_SECCOMP as i32 {
                        self.on_entry(p);
                    } else if ev == Event::PTRACE_EVENT_FORK as i32
                        || ev == Event::PTRACE_EVENT_VFORK as i32
                        || ev == Event::PTRACE_EVENT_CLONE as i32
                    {
                        if let Ok(child) = ptrace::getevent(pid) {
                            self.spawn(child as i32, p);
                        }
                    }
                    self.resume(pid, None);
                }
                WaitStatus::PtraceSyscall(pid) => {
                    let p = pid.as_raw();
                    if self.seccomp {
                        self.on_exit(p);
                    } else {
                        let inside = self.in_syscall.entry(p).or_insert(false);
                        *inside = !*inside;
                        if *inside {
                            self.on_entry(p);
                        } else {
                            self.on_exit(p);
                        }
                    }
                    self.resume(pid, None);
                }
                WaitStatus::Stopped(pid, sig) => {
                    let p = pid.as_raw();
                    if !self.parent.contains_key(&p) {
                        let pp = proc_ppid(p).unwrap_or(self.root);
                        self.spawn(p, pp);
                    }
                    let pass = match sig {
                        Signal::SIGSTOP | Signal::SIGTSTP | Signal::SIGTTIN | Signal::SIGTTOU | Signal::SIGTRAP => None,
                        s => Some(s),
                    };
                    self.resume(pid, pass);
                }
                WaitStatus::Exited(pid, code) => {
                    self.exit(pid.as_raw(), code);
                    if pid.as_raw() == self.root {
                        root_status = code;
                    }
                }
                WaitStatus::Signaled(pid, sig, _) => {
                    self.exit(pid.as_raw(), 128 + sig as i32);
                    if pid.as_raw() == self.root {
                        root_status = 128 + sig as i32;
                    }
                }
                _ => {}
            }
        }
        root_status
    }

    fn resume(&mut self, pid: Pid, sig: Option<Signal>) {
        let r = if !self.seccomp || self.pending.contains_key(&pid.as_raw()) {
            ptrace::syscall(pid, sig)
        } else {
            ptrace::cont(pid, sig)
        };
        let _ = r;
    }

    fn emit(&mut self, pid: i32, op: Op, path: String, path2: Option<String>) {
        self.seq += 1;
        let ppid = self.parent.get(&pid).copied().unwrap_or(0);
        self.events.push(TraceEvent { seq: self.seq, pid, ppid, op, path, path2 });
    }

    fn spawn(&mut self, child: i32, parent: i32) {
        if self.parent.contains_key(&child) {
            return;
        }
        self.parent.insert(child, parent);
        self.emit(child, Op::Spawn, String::new(), None);
    }

    fn exit(&mut self, pid: i32, status: i32) {
        if self.parent.contains_key(&pid) {
            self.emit(pid, Op::Exit, status.to_string(), None);
        }
        self.parent.remove(&pid);
        self.pending.remove(&pid);
        self.in_syscall.remove(&pid);
    }

    fn on_entry(&mut self, p: i32) {
        let pid = Pid::from_raw(p);
        let Ok(regs) = ptrace::getregs(pid) else { return };
        let nr = regs.orig_rax as libc::c_long;
        let a = [regs.rdi, regs.rsi, regs.rdx, regs.r10, regs.r8, regs.r9];
        let path_at = |dirfd: u64, addr: u64| -> Option<String> {
            let raw = read_cstr(p, addr)?;
            resolve(p, dirfd as i32, &raw)
        };
        let pending = match nr {
            libc::SYS_open => path_at(AT_FDCWD as u64, a[0]).and_then(|path| open_op(path, a[1] as i32)),
            libc::SYS_openat => path_at(a[0], a[1]).and_then(|path| open_op(path, a[2] as i32)),
            libc::SYS_creat => path_at(AT_FDCWD as u64, a[0]).and_then(|path| open_op(path, libc::O_CREAT | libc::O_WRONLY | libc::O_TRUNC)),
            libc::SYS_openat2 => {
                let flags = read_u64(p, a[2]).unwrap_or(0) as i32;
                path_at(a[0], a[1]).and_then(|path| open_op(path, flags))
            }
            libc::SYS_rename => Some((path_at(AT_FDCWD as u64, a[0]), path_at(AT_FDCWD as u64, a[1]))).and_then(rename_op),
            libc::SYS_renameat | libc::SYS_renameat2 => Some((path_at(a[0], a[1]), path_at(a[2], a[3]))).and_then(rename_op),
            libc::SYS_unlink => path_at(AT_FDCWD as u64, a[0]).map(|path| Pending::Unlink { path }),
            libc::SYS_unlinkat => {
                if a[2] as i32 & libc::AT_REMOVEDIR != 0 {
                    None
                } else {
                    path_at(a[0], a[1]).map(|path| Pending::Unlink { path })
                }
            }
            libc::SYS_symlink => symlink_op(p, read_cstr(p, a[0]), path_at(AT_FDCWD as u64, a[1])),
            libc::SYS_symlinkat => symlink_op(p, read_cstr(p, a[0]), path_at(a[1], a[2])),
            libc::SYS_link => match (path_at(AT_FDCWD as u64, a[0]), path_at(AT_FDCWD as u64, a[1])) {
                (Some(target), Some(link)) => Some(Pending::Link { target, link }),
                _ => None,
            },
            libc::SYS_linkat => match (path_at(a[0], a[1]), path_at(a[2], a[3])) {
                (Some(target), Some(link)) => Some(Pending::Link { target, link }),
                _ => None,
            },
            libc::SYS_execve => exec_op(p, path_at(AT_FDCWD as u64, a[0]), a[1]),
            libc::SYS_execveat => exec_op(p, path_at(a[0], a[1]), a[2]),
            _ => None,
        };
        if let Some(pe) = pending {
            self.pending.insert(p, pe);
        }
    }

    fn on_exit(&mut self, p: i32) {
        let Some(pe) = self.pending.remove(&p) else { return };
        let Ok(regs) = ptrace::getregs(Pid::from_raw(p)) else { return };
        let ret = regs.rax as i64;
        if ret < 0 {
            return;
        }
        match pe {
            Pending::Open { path, op } => {
                if op == Op::Read && fs::metadata(&path).map(|m| m.is_dir()).unwrap_or(false) {
                    return;
                }
                self.emit(p, op, path, None);
            }
            Pending::Rename { from, to } => self.emit(p, Op::Rename, from, Some(to)),
            Pending::Unlink { path } => self.emit(p, Op::Delete, path, None),
            Pending::Link { target, link } => {
                self.emit(p, Op::Read, target, None);
                self.emit(p, Op::Create, link, None);
            }
            Pending::Exec { path, argv } => {
                self.emit(p, Op::Read, path, None);
                self.emit(p, Op::Exec, argv, None);
            }
        }
    }
}

fn open_op(path: String, flags: i32) -> Option<Pending> {
    if flags & (libc::O_DIRECTORY | libc::O_PATH) != 0 {
        return None;
    }
    let writes = flags & libc::O_ACCMODE != libc::O_RDONLY || flags & (libc::O_CREAT | libc::O_TRUNC) != 0;
    let op = if !writes {
        Op::Read
    } else if flags & libc::O_CREAT != 0 && fs::symlink_metadata(&path).is_err() {
        Op::Create
    } else {
        Op::Write
    };
    Some(Pending::Open { path, op })
}

fn rename_op(paths: (Option<String>, Option<String>)) -> Option<Pending> {
    match paths {
        (Some(from), Some(to)) => Some(Pending::Rename { from, to }),
        _ => None,
    }
}

fn symlink_op(p: i32, target: Option<String>, link: Option<String>) -> Option<Pending> {
    let (target, link) = (target?, link?);
    let abs = if target.starts_with('/') {
        clean_abs(&target)
    } else {
        let dir = Path::new(&link).parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("/"));
        clean_abs(&format!("{}/{}", dir.display(), target))
    };
    let _ = p;
    Some(Pending::Link { target: abs, link })
}

fn exec_op(p: i32, path: Option<String>, argv_addr: u64) -> Option<Pending> {
    let path = path?;
    let mut args = Vec::new();
    let mut addr = argv_addr;
    while args.len() < 4096 && addr != 0 {
        match read_u64(p, addr) {
            Some(0) | None => break,
            Some(ptr) => {
                args.push(read_cstr(p, ptr).unwrap_or_default());
                addr += 8;
            }
        }
    }
    Some(Pending::Exec { path, argv: args.join(" ") })
}

fn resolve(p: i32, dirfd: i32, raw: &str) -> Option<String> {
    if raw.is_empty() {
        return None;
    }
    if raw.starts_with('/') {
        return Some(clean_abs(raw));
    }
    let base = if dirfd == AT_FDCWD {
        fs::read_link(format!("/proc/{p}/cwd")).ok()?
    } else {
        fs::read_link(format!("/proc/{p}/fd/{dirfd}")).ok()?
    };
    Some(clean_abs(&format!("{}/{}", base.display(), raw)))
}

fn proc_ppid(p: i32) -> Option<i32> {
    let status = fs::read_to_string(format!("/proc/{p}/status")).ok()?;
    status.lines().find_map(|l| l.strip_prefix("PPid:")).and_then(|v| v.trim().parse().ok())
}

fn read_mem(p: i32, addr: u64, buf: &mut [u8]) -> usize {
    let remote = [RemoteIoVec { base: addr as usize, len: buf.len() }];
    let mut local = [IoSliceMut::new(buf)];
    process_vm_readv(Pid::from_raw(p), &mut local, &remote).unwrap_or(0)
}

fn read_u64(p: i32, addr: u64) -> Option<u64> {
    let mut b = [0u8; 8];
    (read_mem(p, addr, &mut b) == 8).then(|| u64::from_ne_bytes(b))
}

/// Reads a NUL-terminated string, one page-bounded chunk at a time so a
/// string ending just before an unmapped page is still readable.
fn read_cstr(p: i32, addr: u64) -> Option<String> {
    if addr == 0 {
        return None;
    }
    let mut out: Vec<u8> = Vec::new();
    let mut cur = addr;
    while out.len() < 65536 {
        let room = 4096 - (cur % 4096) as usize;
        let mut chunk = vec![0u8; room];
        let n = read_mem(p, cur, &mut chunk);
        if n == 0 {
            return None;
        }
        if let Some(z) = chunk[..n].iter().position(|b| *b == 0) {
            out.extend_from_slice(&chunk[..z]);
            return Some(String::from_utf8_lossy(&out).into_owned());
        }
        out.extend_from_slice(&chunk[..n]);
        cur += n as u64;
    }
    None
}
