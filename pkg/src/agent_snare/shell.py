"""Medium-interaction fake shell.

Resolves attacker command lines against a personality-configured fake
filesystem and command table. Nothing here ever touches the host: downloads
are simulated, writes go to a per-session copy-on-write overlay, and the
shared base filesystem is immutable.
"""

from __future__ import annotations

import json
import posixpath
import re
import shlex
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Dict, List, Optional, Tuple

from .model import HoneypotPersonality

MAX_LINE_BYTES = 64 * 1024

# injection splice sites, consumed by the injection engine
SITE_COMMAND_OUTPUT = "command_output"
SITE_FILE_CONTENT = "file_content"


@dataclass(frozen=True)
class FsNode:
    path: str
    kind: str  # "file" | "dir"
    content: str = ""
    mode: str = "-rw-r--r--"
    owner: str = "root"
    size: Optional[int] = None  # override for deception; defaults to len(content)
    mtime: str = "Jan 12 09:14"

    @property
    def byte_size(self) -> int:
        return self.size if self.size is not None else len(self.content.encode("utf-8"))


class FakeFilesystem:
    """Immutable base tree, shared read-only across sessions."""

    def __init__(self, nodes: List[FsNode]):
        self.nodes: Dict[str, FsNode] = {}
        for node in nodes:
            path = posixpath.normpath(node.path)
            if not path.startswith("/"):
                raise ValueError(f"filesystem path must be absolute: {node.path!r}")
            if node.kind == "dir" and node.content:
                raise ValueError(f"directory node has content: {path}")
            if path in self.nodes:
                raise ValueError(f"duplicate filesystem path: {path}")
            self.nodes[path] = replace(node, path=path)
        if "/" not in self.nodes:
            self.nodes["/"] = FsNode(path="/", kind="dir", mode="drwxr-xr-x")

    def get(self, path: str) -> Optional[FsNode]:
        return self.nodes.get(posixpath.normpath(path))


@dataclass
class ShellState:
    """Per-session shell context; one instance per connection, never shared."""

    cwd: str
    username: str
    personality: HoneypotPersonality
    fs: FakeFilesystem
    env: Dict[str, str] = field(default_factory=dict)
    last_exit_code: int = 0
    overlay: Dict[str, FsNode] = field(default_factory=dict)
    fetched_urls: Tuple[str, ...] = ()

    def lookup(self, path: str) -> Optional[FsNode]:
        path = posixpath.normpath(path)
        if path in self.overlay:
            return self.overlay[path]
        return self.fs.get(path)

    def listdir(self, path: str) -> List[FsNode]:
        path = posixpath.normpath(path)
        prefix = "/" if path == "/" else path + "/"
        seen: Dict[str, FsNode] = {}
        for source in (self.fs.nodes, self.overlay):
            for p, node in source.items():
                if p != path and p.startswith(prefix) and "/" not in p[len(prefix):]:
                    seen[p] = node
        return [seen[p] for p in sorted(seen)]

    def resolve(self, path: str) -> str:
        if not path.startswith("/"):
            path = posixpath.join(self.cwd, path)
        return posixpath.normpath(path)


@dataclass(frozen=True)
class CommandResult:
    output: str
    exit_code: int
    injection_site: Optional[Tuple[str, Optional[str]]] = None
    terminate: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.exit_code <= 255:
            raise ValueError("exit_code must be in [0, 255]")


def read_file(state_or_fs, path: str) -> Tuple[str, str]:
    """Look up an absolute path; returns (status, content) with status one of
    "ok", "not_found", "is_directory"."""
    if isinstance(state_or_fs, ShellState):
        node = state_or_fs.lookup(path)
    else:
        node = state_or_fs.get(path)
    if node is None:
        return "not_found", ""
    if node.kind == "dir":
        return "is_directory", ""
    return "ok", node.content


_FALLBACK_UNAME = (
    "Linux {hostname} 3.13.0-24-generic #47-Ubuntu SMP "
    "Fri May 2 23:30:00 UTC 2014 x86_64 x86_64 x86_64 GNU/Linux"
)


def _fill(template: str, state_vars: Dict[str, str]) -> str:
    class _Default(dict):
        def __missing__(self, key):  # leave unknown placeholders untouched
            return "{" + key + "}"

    return template.format_map(_Default(state_vars))


def render_uname(personality: HoneypotPersonality) -> CommandResult:
    """Full `uname -a` style line from the personality, marked injectable."""
    template = personality.command_outputs.get("uname") or _FALLBACK_UNAME
    line = _fill(template, {"hostname": personality.hostname})
    if not line.endswith("\n"):
        line += "\n"
    return CommandResult(line, 0, injection_site=(SITE_COMMAND_OUTPUT, "uname"))


def execute(state: ShellState, line: str) -> Tuple[CommandResult, ShellState]:
    """Run one attacker command line; deterministic for a fixed state."""
    if len(line.encode("utf-8", errors="replace")) > MAX_LINE_BYTES:
        line = line.encode("utf-8", errors="replace")[:MAX_LINE_BYTES].decode(
            "utf-8", errors="replace"
        )
    line = line.strip()
    if not line:
        return CommandResult("", 0), state

    try:
        result, state = _run_pipeline(state, line)
    except Exception:
        # a honeypot never crashes a session; surface a bland failure
        result = CommandResult("", 1)
    state = replace(state, last_exit_code=result.exit_code)
    return result, state


def _run_pipeline(state: ShellState, line: str) -> Tuple[CommandResult, ShellState]:
    redirect_target: Optional[str] = None
    if ">" in line:
        line, _, target = line.rpartition(">")
        redirect_target = target.strip().lstrip(">").strip()
        line = line.strip()

    segments = [seg.strip() for seg in line.split("|")] if "|" in line else [line]
    result, state = _run_command(state, segments[0])
    for seg in segments[1:]:
        result = _apply_filter(result, seg)

    if redirect_target:
        path = state.resolve(redirect_target)
        overlay = dict(state.overlay)
        overlay[path] = FsNode(path=path, kind="file", content=result.output)
        state = replace(state, overlay=overlay)
        result = CommandResult("", result.exit_code)
    return result, state


def _apply_filter(result: CommandResult, seg: str) -> CommandResult:
    try:
        argv = shlex.split(seg)
    except ValueError:
        argv = seg.split()
    if not argv:
        return result
    name, args = argv[0], argv[1:]
    lines = result.output.splitlines(keepends=True)
    if name == "head":
        n = _count_arg(args, 10)
        return replace(result, output="".join(lines[:n]))
    if name == "tail":
        n = _count_arg(args, 10)
        return replace(result, output="".join(lines[-n:]) if n else "")
    if name == "grep":
        pattern = args[-1] if args else ""
        try:
            rx = re.compile(pattern)
            kept = [ln for ln in lines if rx.search(ln)]
        except re.error:
            kept = [ln for ln in lines if pattern in ln]
        return CommandResult("".join(kept), 0 if kept else 1,
                             injection_site=result.injection_site)
    # unknown filter stage: pass through untouched
    return result


def _count_arg(args: List[str], default: int) -> int:
    for i, a in enumerate(args):
        if a == "-n" and i + 1 < len(args):
            try:
                return max(0, int(args[i + 1]))
            except ValueError:
                return default
        if a.startswith("-") and a[1:].isdigit():
            return int(a[1:])
    return default


def _run_command(state: ShellState, seg: str) -> Tuple[CommandResult, ShellState]:
    try:
        argv = shlex.split(seg)
    except ValueError:
        argv = seg.split()
    if not argv:
        return CommandResult("", 0), state
    name, args = argv[0], argv[1:]

    if name in ("exit", "logout"):
        return CommandResult("", 0, terminate=True), state
    if name == "pwd":
        return CommandResult(state.cwd + "\n", 0), state
    if name == "whoami":
        return CommandResult(state.username + "\n", 0), state
    if name == "id":
        u = state.username
        uid = 0 if u == "root" else 1000
        return CommandResult(f"uid={uid}({u}) gid={uid}({u}) groups={uid}({u})\n", 0), state
    if name == "hostname":
        return CommandResult(state.personality.hostname + "\n", 0), state
    if name == "echo":
        return _cmd_echo(state, args)
    if name == "cd":
        return _cmd_cd(state, args)
    if name == "ls":
        return _cmd_ls(state, args)
    if name == "cat":
        return _cmd_cat(state, args)
    if name in ("head", "tail", "grep"):
        return _cmd_file_filter(state, name, args)
    if name == "uname":
        if args:
            return render_uname(state.personality), state
        return CommandResult("Linux\n", 0), state
    if name in ("wget", "curl"):
        return _cmd_fetch(state, name, args)
    if name in state.personality.command_outputs and name != "banner":
        template = state.personality.command_outputs[name]
        out = _fill(template, {"hostname": state.personality.hostname,
                               "username": state.username})
        if out and not out.endswith("\n"):
            out += "\n"
        return CommandResult(out, 0, injection_site=(SITE_COMMAND_OUTPUT, name)), state

    return CommandResult(f"{name}: command not found\n", 127), state


def _cmd_echo(state: ShellState, args: List[str]) -> Tuple[CommandResult, ShellState]:
    newline = "\n"
    if args and args[0] == "-n":
        newline = ""
        args = args[1:]
    return CommandResult(" ".join(args) + newline, 0), state


def _cmd_cd(state: ShellState, args: List[str]) -> Tuple[CommandResult, ShellState]:
    target = args[0] if args else _home_for(state)
    path = state.resolve(target)
    node = state.lookup(path)
    if node is None:
        return CommandResult(f"-bash: cd: {target}: No such file or directory\n", 1), state
    if node.kind != "dir":
        return CommandResult(f"-bash: cd: {target}: Not a directory\n", 1), state
    return CommandResult("", 0), replace(state, cwd=path)


def _home_for(state: ShellState) -> str:
    for user, home in state.personality.default_users:
        if user == state.username:
            return home
    return "/root"


def _cmd_ls(state: ShellState, args: List[str]) -> Tuple[CommandResult, ShellState]:
    long_format = False
    show_hidden = False
    paths: List[str] = []
    for a in args:
        if a.startswith("-"):
            long_format = long_format or "l" in a
            show_hidden = show_hidden or "a" in a
        else:
            paths.append(a)
    path = state.resolve(paths[0]) if paths else state.cwd
    node = state.lookup(path)
    if node is None:
        return CommandResult(f"ls: cannot access '{paths[0]}': No such file or directory\n", 2), state
    if node.kind == "file":
        entries = [node]
    else:
        entries = state.listdir(path)
    if not show_hidden:
        entries = [n for n in entries if not posixpath.basename(n.path).startswith(".")]
    if long_format:
        lines = [f"total {len(entries)}"]
        for n in entries:
            mode = n.mode
            if n.kind == "dir" and not mode.startswith("d"):
                mode = "d" + mode[1:]
            lines.append(
                f"{mode} 1 {n.owner} {n.owner} {n.byte_size:>8} {n.mtime} {posixpath.basename(n.path)}"
            )
        out = "\n".join(lines) + "\n"
    else:
        names = [posixpath.basename(n.path) for n in entries]
        out = "  ".join(names) + "\n" if names else ""
    return CommandResult(out, 0), state


def _cmd_cat(state: ShellState, args: List[str]) -> Tuple[CommandResult, ShellState]:
    if not args:
        return CommandResult("", 0), state
    pieces: List[str] = []
    exit_code = 0
    ok_paths: List[str] = []
    for a in args:
        path = state.resolve(a)
        status, content = read_file(state, path)
        if status == "not_found":
            pieces.append(f"cat: {a}: No such file or directory\n")
            exit_code = 1
        elif status == "is_directory":
            pieces.append(f"cat: {a}: Is a directory\n")
            exit_code = 1
        else:
            pieces.append(content)
            ok_paths.append(path)
    site = (SITE_FILE_CONTENT, ok_paths[0]) if len(ok_paths) == 1 else None
    return CommandResult("".join(pieces), exit_code, injection_site=site), state


def _cmd_file_filter(state: ShellState, name: str, args: List[str]) -> Tuple[CommandResult, ShellState]:
    paths = [a for a in args if not a.startswith("-") and not a.isdigit()]
    if name == "grep" and paths:
        paths = paths[1:]  # first non-flag arg is the pattern
    if not paths:
        return CommandResult("", 0), state
    result, state = _cmd_cat(state, paths[-1:])
    if result.exit_code != 0:
        return result, state
    flag_args = [a for a in args if a not in paths[-1:]]
    return _apply_filter(replace(result, injection_site=None), " ".join([name] + flag_args)), state


def _cmd_fetch(state: ShellState, name: str, args: List[str]) -> Tuple[CommandResult, ShellState]:
    urls = [a for a in args if not a.startswith("-")]
    url = urls[0] if urls else ""
    state = replace(state, fetched_urls=state.fetched_urls + (url,))
    if name == "wget":
        filename = posixpath.basename(url.rstrip("/")) or "index.html"
        path = state.resolve(filename)
        overlay = dict(state.overlay)
        overlay[path] = FsNode(path=path, kind="file", content="")
        state = replace(state, overlay=overlay)
        out = (
            f"--2024-05-02 11:40:01--  {url}\n"
            "Connecting... connected.\n"
            "HTTP request sent, awaiting response... 200 OK\n"
            f"Saving to: '{filename}'\n\n"
            f"'{filename}' saved [612/612]\n"
        )
        return CommandResult(out, 0), state
    return CommandResult("<html><body>It works!</body></html>\n", 0), state


def initial_state(personality: HoneypotPersonality, fs: FakeFilesystem,
                  username: str = "root") -> ShellState:
    cwd = "/root"
    for user, home in personality.default_users:
        if user == username:
            cwd = home
            break
    if fs.get(cwd) is None:
        cwd = "/"
    return ShellState(cwd=cwd, username=username, personality=personality, fs=fs)


# ---------------------------------------------------------------------------
# configuration loading


def load_filesystem(path: str) -> FakeFilesystem:
    """Load a filesystem manifest: JSON list of node records."""
    with open(path, "r", encoding="utf-8") as fh:
        records = json.load(fh)
    return filesystem_from_records(records)


def filesystem_from_records(records: List[dict]) -> FakeFilesystem:
    nodes = []
    for rec in records:
        nodes.append(
            FsNode(
                path=rec["path"],
                kind=rec["kind"],
                content=rec.get("content", ""),
                mode=rec.get("mode", "drwxr-xr-x" if rec["kind"] == "dir" else "-rw-r--r--"),
                owner=rec.get("owner", "root"),
                size=rec.get("size"),
                mtime=rec.get("mtime", "Jan 12 09:14"),
            )
        )
    return FakeFilesystem(nodes)


def load_personality(path: str) -> HoneypotPersonality:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return personality_from_dict(obj)


def personality_from_dict(obj: dict) -> HoneypotPersonality:
    return HoneypotPersonality(
        hostname=obj["hostname"],
        ssh_version_banner=obj["ssh_version_banner"],
        default_users=tuple((u, h) for u, h in obj.get("default_users", [])),
        filesystem_seed=obj.get("filesystem_seed", "builtin"),
        command_outputs=dict(obj.get("command_outputs", {})),
    )


def _data_text(name: str) -> str:
    return resources.files("agent_snare.data").joinpath(name).read_text(encoding="utf-8")


def default_personality() -> HoneypotPersonality:
    return personality_from_dict(json.loads(_data_text("personality.json")))


def default_filesystem() -> FakeFilesystem:
    return filesystem_from_records(json.loads(_data_text("filesystem.json")))


def load_seeded_filesystem(personality: HoneypotPersonality,
                           base_dir: Optional[str] = None) -> FakeFilesystem:
    seed = personality.filesystem_seed
    if seed in ("", "builtin"):
        return default_filesystem()
    if not posixpath.isabs(seed) and base_dir:
        seed = posixpath.join(base_dir, seed)
    return load_filesystem(seed)
