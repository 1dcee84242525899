//! Invoking the `make` program.

use std::path::Path;
use std::process::{Command, Output, Stdio};

use super::MakeError;

#[derive(Debug, Clone)]
pub struct MakeRunner {
    pub program: String,
    /// User-supplied arguments appended to every invocation.
    pub args: Vec<String>,
}

impl Default for MakeRunner {
    fn default() -> Self {
        MakeRunner { program: "make".to_string(), args: Vec::new() }
    }
}

impl MakeRunner {
    pub fn new(program: &str, args: &[String]) -> MakeRunner {
        MakeRunner { program: program.to_string(), args: args.to_vec() }
    }

    fn command(&self, root: &Path, leading: &[&str], trailing: &[String]) -> Command {
        let mut c = Command::new(&self.program);
        c.current_dir(root).args(leading).args(&self.args).args(trailing);
        // Debug markers are matched in English.
        c.env("LC_ALL", "C").env_remove("MAKEFLAGS").env_remove("MFLAGS");
        c.stdin(Stdio::null());
        c
    }

    fn output(&self, mut c: Command, what: &str) -> Result<Output, MakeError> {
        let out = c.output().map_err(|e| MakeError::Io { context: format!("running {what}"), source: e })?;
        if !out.status.success() {
            return Err(MakeError::MakeFailed {
                command: what.to_string(),
                status: out.status.code().unwrap_or(-1),
                stderr: tail(&String::from_utf8_lossy(&out.stderr)),
            });
        }
        Ok(out)
    }

    /// Output of `make -pn`.
    pub fn database(&self, root: &Path) -> Result<String, MakeError> {
        self.database_for(root, &[])
    }

    pub fn database_for(&self, root: &Path, goals: &[String]) -> Result<String, MakeError> {
        let mut c = self.command(root, &["-pn"], goals);
        let what = format!("{} -pn", self.program);
        let out = c.output().map_err(|e| MakeError::Io { context: format!("running {what}"), source: e })?;
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        // "No targets" and missing-rule errors still print a full database.
        if !out.status.success() && !text.contains("# Finished Make data base") {
            return Err(MakeError::MakeFailed {
                command: what,
                status: out.status.code().unwrap_or(-1),
                stderr: tail(&String::from_utf8_lossy(&out.stderr)),
            });
        }
        if !out.status.success() {
            log::warn!("{what} failed but printed its database: {}", tail(&String::from_utf8_lossy(&out.stderr)));
        }
        Ok(text)
    }

    /// Output of `make -n -B --debug=basic`.
    pub fn dry_run(&self, root: &Path) -> Result<String, MakeError> {
        let c = self.command(root, &["-n", "-B", "--debug=basic"], &[]);
        let out = self.output(c, &format!("{} -n -B --debug=basic", self.program))?;
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    /// Runs make untraced with extra leading flags and goals.
    pub fn build(&self, root: &Path, leading: &[&str], goals: &[String]) -> Result<(), MakeError> {
        let c = self.command(root, leading, goals);
        self.output(c, &format!("{} {}", self.program, leading.join(" ")))?;
        Ok(())
    }

    /// `make -q`: true when nothing needs rebuilding.
    pub fn up_to_date(&self, root: &Path, goals: &[String]) -> Result<bool, MakeError> {
        let mut c = self.command(root, &["-q"], goals);
        c.stdout(Stdio::null()).stderr(Stdio::null());
        let st = c.status().map_err(|e| MakeError::Io { context: "running make -q".into(), source: e })?;
        Ok(st.success())
    }
}

fn tail(s: &str) -> String {
    let lines: Vec<&str> = s.lines().collect();
    lines[lines.len().saturating_sub(30)..].join("\n")
}
