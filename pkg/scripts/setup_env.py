#!/usr/bin/env python3
"""
環境設置腳本
安裝依賴、建立輸出目錄並從 .env.example 產生 .env
"""

import os
import subprocess
import sys
from pathlib import Path


def check_command(command):
    """檢查命令是否可用"""
    try:
        subprocess.run(f"{command} --version", shell=True, check=True, capture_output=True)
        return True
    except subprocess.CalledProcessError:
        return False


def install_dependencies():
    print("📦 正在安裝依賴項...")
    if not check_command("pip"):
        print("❌ 未找到 pip，請先安裝 Python 及 pip")
        sys.exit(1)
    try:
        subprocess.run("pip install -r requirements.txt", shell=True, check=True)
        print("✅ 依賴項安裝成功")
    except subprocess.CalledProcessError as e:
        print(f"❌ 依賴項安裝失敗: {e}")
        sys.exit(1)


def create_directories():
    """建立預設輸出目錄 (NHOC_OUTPUT_DIR 可覆寫)"""
    print("📁 檢查並建立輸出目錄...")
    output = Path(os.getenv("NHOC_OUTPUT_DIR", "data/output"))
    for dir_path in (output, output / "sweeps", output / "checks"):
        if not dir_path.exists():
            print(f"  建立目錄: {dir_path}")
            dir_path.mkdir(parents=True, exist_ok=True)
    print("✅ 目錄檢查完成")


def check_env_file():
    print("🔑 檢查環境變數文件...")
    env_example = Path(".env.example")
    env_file = Path(".env")
    if not env_file.exists() and env_example.exists():
        print("  建立 .env (從 .env.example 複製)")
        env_file.write_text(env_example.read_text(encoding="utf-8"), encoding="utf-8")
        print("  可在 .env 中調整步長、Newton 容許誤差與輸出目錄")
    if env_file.exists():
        print("✅ .env 文件存在")
    else:
        print("ℹ️  未找到 .env，將使用內建預設值")


def main():
    print("===== 非完整最優控制工具包環境設置 =====")
    script_dir = os.path.dirname(os.path.abspath(__file__))
    os.chdir(os.path.join(script_dir, ".."))

    install_dependencies()
    create_directories()
    check_env_file()

    print("\n✨ 環境設置完成！")
    print("執行範例:")
    print("  python -m app.main simulate --preset sleigh-obstacle")
    print("  python -m app.main check --preset cvt-shift")
    print("\n執行測試:")
    print("  python -m pytest tests")


if __name__ == "__main__":
    main()
