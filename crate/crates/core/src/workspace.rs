//! On-disk workspace: a fixed directory layout plus a manifest registering
//! each project's paper and repository.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::code_ingest::ProjectStats;
use crate::error::{Error, Result};
use crate::records::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
pub const LAYOUT: [&str; 7] = [
    "corpus",
    "embeddings",
    "candidates",
    "annotations",
    "datasets",
    "models",
    "reports",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Project {
    pub project_id: String,
    /// Relative paths are resolved against the workspace root.
    pub paper_path: PathBuf,
    pub repo_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<ProjectStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceManifest {
    pub projects: Vec<Project>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub config_digest: String,
}

impl WorkspaceManifest {
    pub fn new(config_digest: impl Into<String>, created_at: u64) -> Self {
        WorkspaceManifest {
            projects: Vec::new(),
            created_at,
            config_digest: config_digest.into(),
        }
    }

    pub fn project(&self, id: &str) -> Option<&Project> {
        self.projects.iter().find(|p| p.project_id == id)
    }

    pub fn project_mut(&mut self, id: &str) -> Option<&mut Project> {
        self.projects.iter_mut().find(|p| p.project_id == id)
    }

    pub fn project_ids(&self) -> Vec<String> {
        self.projects.iter().map(|p| p.project_id.clone()).collect()
    }

    /// Adds a project, rejecting duplicate ids. Path existence is checked by
    /// [`Workspace::register`], which knows how to resolve them.
    pub fn add(&mut self, project: Project) -> Result<()> {
        validate_slug(&project.project_id)?;
        if self.project(&project.project_id).is_some() {
            return Err(Error::validation(format!(
                "project {} is already registered",
                project.project_id
            )));
        }
        self.projects.push(project);
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<Project> {
        let pos = self
            .projects
            .iter()
            .position(|p| p.project_id == id)
            .ok_or_else(|| Error::validation(format!("project {id} is not registered")))?;
        Ok(self.projects.remove(pos))
    }
}

/// Project ids are lowercase ASCII letters, digits, `-` and `_`, starting
/// with a letter or digit.
pub fn validate_slug(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        && id
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "invalid project id {id:?}: use lowercase letters, digits, '-' or '_'"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

/// Exclusive lock held by mutating stages.
#[derive(Debug)]
pub struct WorkspaceLock {
    _file: File,
}

impl Workspace {
    pub fn init(root: &Path, config_digest: &str) -> Result<(Workspace, WorkspaceManifest)> {
        let ws = Workspace {
            root: root.to_path_buf(),
        };
        if ws.manifest_path().exists() {
            return Err(Error::validation(format!(
                "{} is already initialized",
                root.display()
            )));
        }
        for d in LAYOUT {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let created_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = WorkspaceManifest::new(config_digest, created_at);
        ws.save(&manifest)?;
        Ok((ws, manifest))
    }

    pub fn open(root: &Path) -> Result<(Workspace, WorkspaceManifest)> {
        let ws = Workspace {
            root: root.to_path_buf(),
        };
        if !ws.manifest_path().exists() {
            return Err(Error::missing(
                format!("workspace manifest {}", ws.manifest_path().display()),
                "run `concord init` first",
            ));
        }
        let manifest = ws.load()?;
        Ok((ws, manifest))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn corpus(&self) -> PathBuf {
        self.dir("corpus")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.dir("embeddings")
    }
    pub fn candidates(&self) -> PathBuf {
        self.dir("candidates")
    }
    pub fn annotations(&self) -> PathBuf {
        self.dir("annotations")
    }
    pub fn datasets(&self) -> PathBuf {
        self.dir("datasets")
    }
    pub fn models(&self) -> PathBuf {
        self.dir("models")
    }
    pub fn reports(&self) -> PathBuf {
        self.dir("reports")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load(&self) -> Result<WorkspaceManifest> {
        let m: WorkspaceManifest = read_json(&self.manifest_path())?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &m.projects {
            if !seen.insert(p.project_id.as_str()) {
                return Err(Error::validation(format!(
                    "manifest lists project {} twice",
                    p.project_id
                )));
            }
        }
        Ok(m)
    }

    pub fn save(&self, manifest: &WorkspaceManifest) -> Result<()> {
        write_json(&self.manifest_path(), manifest)
    }

    /// Validates paths and adds the project to `manifest`.
    pub fn register(&self, manifest: &mut WorkspaceManifest, project: Project) -> Result<()> {
        let paper = self.resolve(&project.paper_path);
        if !paper.is_file() {
            return Err(Error::validation(format!(
                "paper document {} does not exist",
                paper.display()
            )));
        }
        let repo = self.resolve(&project.repo_path);
        if !repo.is_dir() {
            return Err(Error::validation(format!(
                "repository {} does not exist",
                repo.display()
            )));
        }
        manifest.add(project)
    }

    /// Takes the exclusive workspace lock, failing fast when another process
    /// holds it.
    pub fn lock(&self) -> Result<WorkspaceLock> {
        let path = self.root.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(WorkspaceLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(Error::validation(format!(
                "workspace {} is locked by another process",
                self.root.display()
            ))),
            Err(fs::TryLockError::Error(e)) => Err(Error::io(&path, e)),
        }
    }
}

/// Per-field means over projects that have stats.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStats {
    pub projects: usize,
    pub lines_of_code: f64,
    pub num_files: f64,
    pub num_functions: f64,
    pub cyclomatic_complexity: f64,
    pub stars: f64,
    pub citations: f64,
}

pub fn mean_stats(manifest: &WorkspaceManifest) -> MeanStats {
    let all: Vec<&ProjectStats> = manifest.projects.iter().filter_map(|p| p.stats.as_ref()).collect();
    let n = all.len();
    if n == 0 {
        return MeanStats::default();
    }
    let mean = |f: fn(&ProjectStats) -> u64| all.iter().map(|s| f(s) as f64).sum::<f64>() / n as f64;
    MeanStats {
        projects: n,
        lines_of_code: mean(|s| s.lines_of_code),
        num_files: mean(|s| s.num_files),
        num_functions: mean(|s| s.num_functions),
        cyclomatic_complexity: mean(|s| s.cyclomatic_complexity),
        stars: mean(|s| s.stars),
        citations: mean(|s| s.citations),
    }
}

/// Text table of per-project statistics followed by the mean row.
pub fn render_stats(manifest: &WorkspaceManifest) -> String {
    let mut out = format!(
        "{:<24} {:>10} {:>8} {:>10} {:>12} {:>8} {:>10}\n",
        "project", "loc", "files", "functions", "cyclomatic", "stars", "citations"
    );
    for p in &manifest.projects {
        match &p.stats {
            Some(s) => out.push_str(&format!(
                "{:<24} {:>10} {:>8} {:>10} {:>12} {:>8} {:>10}\n",
                p.project_id,
                s.lines_of_code,
                s.num_files,
                s.num_functions,
                s.cyclomatic_complexity,
                s.stars,
                s.citations
            )),
            None => out.push_str(&format!("{:<24} (not ingested)\n", p.project_id)),
        }
    }
    let m = mean_stats(manifest);
    out.push_str(&format!(
        "{:<24} {:>10.1} {:>8.1} {:>10.1} {:>12.1} {:>8.1} {:>10.1}\n",
        format!("mean (n={})", m.projects),
        m.lines_of_code,
        m.num_files,
        m.num_functions,
        m.cyclomatic_complexity,
        m.stars,
        m.citations
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn project(root: &Path, id: &str) -> Project {
        let paper = root.join(format!("{id}.json"));
        fs::write(&paper, "{}").unwrap();
        let repo = root.join(format!("{id}-repo"));
        fs::create_dir_all(&repo).unwrap();
        Project {
            project_id: id.into(),
            paper_path: paper,
            repo_path: repo,
            stats: None,
        }
    }

    #[test]
    fn init_creates_layout_and_refuses_twice() {
        let dir = tempfile::tempdir().unwrap();
        let (ws, m) = Workspace::init(dir.path(), "d").unwrap();
        assert!(m.projects.is_empty());
        for d in LAYOUT {
            assert!(dir.path().join(d).is_dir());
        }
        let again = Workspace::init(dir.path(), "d").unwrap_err();
        assert!(again.to_string().contains("already initialized"));
        assert_eq!(ws.load().unwrap(), m);
    }

    #[test]
    fn open_without_init_is_missing_dependency() {
        let dir = tempfile::tempdir().unwrap();
        let e = Workspace::open(dir.path()).unwrap_err();
        assert_eq!(e.class(), crate::ErrorClass::DependencyMissing);
    }

    #[test]
    fn register_forty_eight_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let (ws, mut m) = Workspace::init(dir.path(), "d").unwrap();
        for i in 0..48 {
            ws.register(&mut m, project(dir.path(), &format!("p{i:02}"))).unwrap();
        }
        assert_eq!(m.projects.len(), 48);
        assert!(ws.register(&mut m, project(dir.path(), "p03")).is_err());
        ws.save(&m).unwrap();
        assert_eq!(ws.load().unwrap().projects.len(), 48);
    }

    #[test]
    fn register_rejects_missing_paths_and_bad_slugs() {
        let dir = tempfile::tempdir().unwrap();
        let (ws, mut m) = Workspace::init(dir.path(), "d").unwrap();
        let mut p = project(dir.path(), "a");
        p.paper_path = dir.path().join("absent.json");
        assert!(ws.register(&mut m, p).is_err());
        let mut p = project(dir.path(), "b");
        p.repo_path = dir.path().join("absent");
        assert!(ws.register(&mut m, p).is_err());
        assert!(ws.register(&mut m, project(dir.path(), "Bad Id")).is_err());
        assert!(m.projects.is_empty());
    }

    #[test]
    fn manifest_bytes_stable_across_reload() {
        let dir = tempfile::tempdir().unwrap();
        let (ws, mut m) = Workspace::init(dir.path(), "d").unwrap();
        let mut p = project(dir.path(), "x");
        p.stats = Some(ProjectStats {
            lines_of_code: 10,
            num_files: 1,
            num_functions: 2,
            cyclomatic_complexity: 3,
            stars: 4,
            citations: 5,
        });
        ws.register(&mut m, p).unwrap();
        ws.save(&m).unwrap();
        let first = fs::read(ws.manifest_path()).unwrap();
        let back = ws.load().unwrap();
        assert_eq!(back, m);
        ws.save(&back).unwrap();
        assert_eq!(fs::read(ws.manifest_path()).unwrap(), first);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let (ws, _) = Workspace::init(dir.path(), "d").unwrap();
        let held = ws.lock().unwrap();
        assert!(ws.lock().is_err());
        drop(held);
        assert!(ws.lock().is_ok());
    }

    #[test]
    fn mean_stats_over_ingested_projects() {
        let mut m = WorkspaceManifest::new("d", 0);
        for (i, loc) in [10u64, 20, 60].into_iter().enumerate() {
            m.projects.push(Project {
                project_id: format!("p{i}"),
                paper_path: "a".into(),
                repo_path: "b".into(),
                stats: Some(ProjectStats {
                    lines_of_code: loc,
                    ..Default::default()
                }),
            });
        }
        m.projects.push(Project {
            project_id: "q".into(),
            paper_path: "a".into(),
            repo_path: "b".into(),
            stats: None,
        });
        let s = mean_stats(&m);
        assert_eq!(s.projects, 3);
        assert_eq!(s.lines_of_code, 30.0);
        assert!(render_stats(&m).contains("mean (n=3)"));
        assert_eq!(mean_stats(&WorkspaceManifest::new("d", 0)), MeanStats::default());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Add(u8),
        Remove(u8),
    }

    proptest! {
        // Replays random add/remove sequences against a set model.
        #[test]
        fn ids_stay_unique_under_any_sequence(ops in proptest::collection::vec(
            prop_oneof![(0u8..6).prop_map(Op::Add), (0u8..6).prop_map(Op::Remove)], 0..40))
        {
            let mut m = WorkspaceManifest::new("d", 0);
            let mut model = std::collections::BTreeSet::new();
            for op in ops {
                match op {
                    Op::Add(i) => {
                        let r = m.add(Project {
                            project_id: format!("p{i}"),
                            paper_path: "a".into(),
                            repo_path: "b".into(),
                            stats: None,
                        });
                        prop_assert_eq!(r.is_ok(), model.insert(i));
                    }
                    Op::Remove(i) => {
                        prop_assert_eq!(m.remove(&format!("p{i}")).is_ok(), model.remove(&i));
                    }
                }
                let ids: std::collections::BTreeSet<_> = m.project_ids().into_iter().collect();
                prop_assert_eq!(ids.len(), m.projects.len());
                prop_assert_eq!(m.projects.len(), model.len());
            }
        }
    }
}
