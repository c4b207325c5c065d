"""Minimal stand-in for the sandbox runner, for protocol tests.

Reads one request frame and answers with a canned response chosen by the
script text: "hang" sleeps past any limit, "garble" writes a bad frame,
"fail" reports a runtime error, anything else succeeds.
"""
import base64
import json
import struct
import sys
import time


def read_frame(stream):
    (length,) = struct.unpack(">I", stream.read(4))
    return json.loads(stream.read(length).decode("utf-8"))


def write_frame(stream, obj):
    data = json.dumps(obj).encode("utf-8")
    stream.write(struct.pack(">I", len(data)) + data)
    stream.flush()


def main():
    req = read_frame(sys.stdin.buffer)
    script = req["script"]
    out = sys.stdout.buffer
    if "hang" in script:
        time.sleep(30)
    if "garble" in script:
        out.write(b"\x00\x00\x00\x05nope!")
        out.flush()
        return
    if "fail" in script:
        write_frame(out, {"status": "error", "stdout": "", "stderr": "Traceback ...\nZeroDivisionError: division by zero",
                          "error": "ZeroDivisionError: division by zero", "error_class": "runtime", "artifacts": []})
        return
    files = {m["name"]: len(base64.b64decode(m["content_b64"])) for m in req["manifest"]}
    stdout = "files: " + ", ".join(f"{k}={v}" for k, v in sorted(files.items())) + "\n"
    stdout += "limits: " + json.dumps(req["limits"], sort_keys=True) + "\n"
    write_frame(out, {"status": "ok", "stdout": stdout, "stderr": "", "error": None, "error_class": None,
                      "artifacts": ["result.txt"]})


if __name__ == "__main__":
    main()
