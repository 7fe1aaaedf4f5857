"""Regenerate the built-in profile data files from the sparse tables below.

The generated files under src/gridward/profiles/ are the frozen artifact;
detection acceptance numbers depend on them. Only rerun this deliberately.

    python tools/make_profiles.py
"""

from pathlib import Path

from gridward.sim import BehaviorProfile, render_profile
from gridward.trace import SYSCALLS

OUT = Path(__file__).resolve().parents[1] / "src" / "gridward" / "profiles"

CVMFS = "/cvmfs/alice.cern.ch/el9"
DATA = "/data/alice/sim/2024/LHC24a"

FD = (3, 63)
MMAP_LEN = (4096, 1048576)
BRK_INC = (4096, 131072)
PID = (1000, 32767)

PROFILES = {
    "reco": dict(
        kind="normal",
        init={"execve": 1.0},
        rows={
            "execve": {"mmap": 0.7, "access": 0.3},
            "access": {"open": 1.0},
            "mmap": {"open": 0.4, "read": 0.3, "brk": 0.2, "mmap": 0.1},
            "open": {"read": 0.8, "mmap": 0.1, "close": 0.1},
            "read": {"read": 0.55, "write": 0.15, "close": 0.15, "brk": 0.1, "mmap": 0.05},
            "write": {"write": 0.35, "read": 0.35, "close": 0.2, "brk": 0.1},
            "close": {"open": 0.6, "stat": 0.25, "getdents": 0.05, "clone": 0.05, "exit": 0.05},
            "stat": {"open": 0.8, "access": 0.2},
            "brk": {"read": 0.5, "write": 0.3, "mmap": 0.2},
            "getdents": {"stat": 0.6, "open": 0.4},
            "clone": {"read": 0.5, "mmap": 0.5},
            "exit": {"wait": 1.0},
            "wait": {"open": 0.5, "read": 0.5},
        },
        pools={
            ("open", 0): [f"{CVMFS}/lib/libAliRoot.so", f"{DATA}/{{n}}/raw.root",
                          "/job/{job}/input.root", "/job/{job}/reco.log",
                          "/job/{job}/out/AliESDs.root"],
            ("stat", 0): ["/job/{job}/input.root", f"{DATA}/{{n}}/raw.root", f"{CVMFS}/etc/OCDB.root"],
            ("access", 0): [f"{CVMFS}/bin/aliroot", "/job/{job}"],
            ("execve", 0): [f"{CVMFS}/bin/aliroot"],
            ("getdents", 0): ["/job/{job}", DATA],
        },
        ranges={("read", 0): FD, ("write", 0): FD, ("close", 0): FD,
                ("mmap", 0): MMAP_LEN, ("brk", 0): BRK_INC},
        rets={"open": FD, "read": (0, 65536), "write": (1, 65536), "clone": PID},
    ),
    "montecarlo": dict(
        kind="normal",
        init={"execve": 1.0},
        rows={
            "execve": {"mmap": 1.0},
            "mmap": {"mmap": 0.3, "open": 0.3, "brk": 0.4},
            "open": {"read": 0.9, "close": 0.1},
            "read": {"read": 0.4, "close": 0.3, "brk": 0.3},
            "close": {"brk": 0.5, "clone": 0.2, "write": 0.3},
            "brk": {"brk": 0.3, "write": 0.4, "mmap": 0.2, "read": 0.1},
            "write": {"write": 0.5, "brk": 0.3, "close": 0.1, "open": 0.1},
            "clone": {"brk": 0.6, "wait": 0.4},
            "wait": {"write": 0.5, "brk": 0.5},
        },
        pools={
            ("open", 0): [f"{CVMFS}/share/geometry.root", "/job/{job}/Config.C",
                          "/job/{job}/galice.root", "/job/{job}/Kinematics.root"],
            ("execve", 0): [f"{CVMFS}/bin/o2-sim"],
        },
        ranges={("read", 0): FD, ("write", 0): FD, ("close", 0): FD,
                ("mmap", 0): MMAP_LEN, ("brk", 0): BRK_INC},
        rets={"open": FD, "read": (0, 65536), "write": (1, 65536), "clone": PID},
    ),
    "merge": dict(
        kind="normal",
        init={"execve": 1.0},
        rows={
            "execve": {"mmap": 1.0},
            "mmap": {"getdents": 0.4, "socket": 0.4, "open": 0.2},
            "getdents": {"stat": 0.7, "open": 0.3},
            "stat": {"socket": 0.5, "open": 0.5},
            "socket": {"connect": 1.0},
            "connect": {"recv": 0.8, "send": 0.2},
            "send": {"recv": 1.0},
            "recv": {"recv": 0.6, "write": 0.3, "close": 0.1},
            "write": {"recv": 0.4, "write": 0.3, "close": 0.3},
            "open": {"read": 0.6, "write": 0.4},
            "read": {"read": 0.5, "write": 0.5},
            "close": {"socket": 0.5, "getdents": 0.3, "stat": 0.1, "exit": 0.1},
            "exit": {"wait": 1.0},
            "wait": {"socket": 0.5, "getdents": 0.5},
        },
        pools={
            ("connect", 0): ["root://eospublic.cern.ch:1094", "root://alice-se.gsi.de:1094"],
            ("open", 0): ["/job/{job}/merged.root", "/job/{job}/inputs.txt"],
            ("stat", 0): [f"{DATA}/{{n}}/AnalysisResults.root", "/job/{job}/merged.root"],
            ("getdents", 0): [DATA, "/job/{job}"],
            ("execve", 0): [f"{CVMFS}/bin/hadd"],
        },
        ranges={("read", 0): FD, ("write", 0): FD, ("close", 0): FD, ("recv", 0): FD,
                ("send", 0): FD, ("mmap", 0): MMAP_LEN},
        rets={"open": FD, "socket": FD, "read": (0, 65536), "recv": (0, 65536),
              "write": (1, 65536)},
    ),
    "credential-theft": dict(
        kind="attack",
        init={"getdents": 0.5, "stat": 0.5},
        rows={
            "getdents": {"open": 0.6, "stat": 0.4},
            "stat": {"open": 0.7, "getdents": 0.3},
            "open": {"read": 1.0},
            "read": {"read": 0.3, "socket": 0.3, "close": 0.2, "write": 0.2},
            "socket": {"connect": 1.0},
            "connect": {"send": 1.0},
            "send": {"send": 0.4, "close": 0.4, "recv": 0.2},
            "recv": {"close": 1.0},
            "close": {"open": 0.5, "getdents": 0.3, "stat": 0.2},
            "write": {"send": 0.5, "close": 0.5},
        },
        pools={
            ("open", 0): ["/pilot/credentials/x509", "/pilot/credentials/token", "/etc/passwd"],
            ("stat", 0): ["/pilot/credentials/x509", "/etc/passwd"],
            ("getdents", 0): ["/pilot/credentials", "/etc"],
            ("connect", 0): ["203.0.113.7:443", "198.51.100.23:8443"],
        },
        ranges={("read", 0): FD, ("write", 0): FD, ("close", 0): FD, ("send", 0): FD},
        rets={"open": FD, "socket": FD, "read": (0, 4096), "send": (1, 4096)},
    ),
    "cryptominer": dict(
        kind="attack",
        init={"socket": 1.0},
        rows={
            "socket": {"connect": 1.0},
            "connect": {"recv": 1.0},
            "recv": {"mmap": 0.3, "brk": 0.3, "send": 0.2, "recv": 0.2},
            "mmap": {"brk": 0.5, "mmap": 0.2, "send": 0.3},
            "brk": {"brk": 0.4, "send": 0.3, "recv": 0.2, "mmap": 0.1},
            "send": {"recv": 0.7, "socket": 0.1, "brk": 0.2},
        },
        pools={
            ("connect", 0): ["stratum+tcp://pool.minexmr.com:4444",
                             "stratum+tcp://xmr.nanopool.org:14444",
                             "stratum+tcp://eu.moneroocean.stream:10128"],
        },
        ranges={("recv", 0): FD, ("send", 0): FD, ("mmap", 0): (2097152, 2097152),
                ("brk", 0): BRK_INC},
        rets={"socket": FD, "recv": (64, 512), "send": (64, 512)},
    ),
    "dos-forkbomb": dict(
        kind="attack",
        init={"clone": 1.0},
        rows={
            "clone": {"clone": 0.65, "execve": 0.15, "mmap": 0.1, "fork": 0.1},
            "fork": {"clone": 0.7, "exit": 0.3},
            "execve": {"clone": 0.7, "mmap": 0.3},
            "mmap": {"clone": 1.0},
            "exit": {"clone": 1.0},
        },
        pools={("execve", 0): ["/tmp/.x/bomb"]},
        ranges={("mmap", 0): (4096, 65536)},
        rets={"clone": PID, "fork": PID},
    ),
    "job-tamper": dict(
        kind="attack",
        init={"getdents": 1.0},
        rows={
            "getdents": {"open": 0.5, "stat": 0.3, "chmod": 0.2},
            "stat": {"open": 0.6, "chown": 0.2, "getdents": 0.2},
            "open": {"write": 0.6, "read": 0.4},
            "write": {"write": 0.3, "close": 0.5, "kill": 0.2},
            "read": {"write": 0.5, "close": 0.5},
            "close": {"getdents": 0.4, "chmod": 0.3, "stat": 0.3},
            "chmod": {"chown": 0.5, "open": 0.5},
            "chown": {"kill": 0.3, "getdents": 0.7},
            "kill": {"getdents": 0.5, "open": 0.5},
        },
        pools={
            ("getdents", 0): ["/job/", "/job/{other}"],
            ("open", 0): ["/job/{other}/AliESDs.root", "/job/{other}/output.root",
                          "/job/{other}/job.jdl"],
            ("stat", 0): ["/job/{other}/output.root", "/job/{other}/job.jdl"],
            ("chmod", 0): ["/job/{other}/output.root"],
            ("chown", 0): ["/job/{other}/output.root"],
        },
        ranges={("write", 0): FD, ("read", 0): FD, ("close", 0): FD, ("kill", 0): PID,
                ("chmod", 1): (0, 511), ("chown", 1): (1000, 65535)},
        rets={"open": FD, "read": (0, 65536), "write": (1, 65536)},
    ),
    "escape-privesc": dict(
        kind="attack",
        init={"unshare": 0.5, "clone": 0.5},
        rows={
            "unshare": {"mount": 0.6, "setuid": 0.4},
            "mount": {"open": 0.5, "execve": 0.3, "chmod": 0.2},
            "setuid": {"setgid": 0.5, "execve": 0.5},
            "setgid": {"execve": 0.5, "ptrace": 0.5},
            "execve": {"ptrace": 0.4, "unshare": 0.3, "mmap": 0.3},
            "ptrace": {"ptrace": 0.5, "read": 0.2, "write": 0.3},
            "clone": {"unshare": 0.5, "ptrace": 0.5},
            "open": {"read": 0.5, "write": 0.5},
            "read": {"ptrace": 0.5, "setuid": 0.5},
            "write": {"unshare": 0.5, "mount": 0.5},
            "chmod": {"execve": 1.0},
            "mmap": {"setuid": 0.5, "unshare": 0.5},
        },
        pools={
            ("mount", 0): ["/proc", "/sys/fs/cgroup", "/"],
            ("open", 0): ["/proc/1/root/etc/shadow", "/proc/self/mem"],
            ("execve", 0): ["/tmp/.x/sh", "/bin/su"],
            ("chmod", 0): ["/tmp/.x/sh"],
        },
        ranges={("setuid", 0): (0, 0), ("setgid", 0): (0, 0), ("ptrace", 0): (16, 16),
                ("ptrace", 1): (1, 32767), ("read", 0): FD, ("write", 0): FD,
                ("mmap", 0): (4096, 65536)},
        rets={"clone": PID, "open": FD},
    ),
}


def dense(dist: dict[str, float]) -> tuple[float, ...]:
    return tuple(dist.get(sc, 0.0) for sc in SYSCALLS)


def build(name: str, spec: dict) -> BehaviorProfile:
    init = dense(spec["init"])
    rows = tuple(dense(spec["rows"][sc]) if sc in spec["rows"] else init for sc in SYSCALLS)
    pools = {k: tuple(v) for k, v in spec["pools"].items()}
    return BehaviorProfile(name, spec["kind"], init, rows, pools, spec["ranges"], spec["rets"], 500)


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, spec in PROFILES.items():
        (OUT / f"{name}.profile").write_text(render_profile(build(name, spec)), encoding="utf-8")
        print(f"wrote {name}.profile")


if __name__ == "__main__":
    main()
