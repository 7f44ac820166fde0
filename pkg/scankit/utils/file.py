from pathlib import Path
from typing import Iterable

import os
import shutil
import tempfile


class FileHelper:
    @staticmethod
    def folder_create(folder_name: Path) -> None:
        """新建文件夹 (含父目录, 已存在时不报错)

        Args:
            folder_name (Path): 文件夹名
        """
        Path(folder_name).mkdir(parents=True, exist_ok=True)

    @staticmethod
    def atomic_write(path: Path, data: bytes | str) -> None:
        """先写临时文件再改名, 中途中断不会留下半个文件

        Args:
            path (Path): 目标文件
            data (bytes | str): 文件内容, str 按 utf-8 编码
        """
        path = Path(path)
        FileHelper.folder_create(path.parent)
        if isinstance(data, str):
            data = data.encode("utf-8")
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as file:
                file.write(data)
            os.replace(tmp, path)
        except BaseException:
            FileHelper.filePathRemove(Path(tmp))
            raise

    @staticmethod
    def write_lines(path: Path, lines: Iterable[str]) -> None:
        """逐行写入文本文件 (原子替换)"""
        FileHelper.atomic_write(path, "".join(line if line.endswith("\n") else line + "\n" for line in lines))

    @staticmethod
    def filePathRemove(path: Path) -> bool:
        """文件或路径删除"""
        try:
            if os.path.exists(path):  # 检查路径是否存在
                if os.path.isfile(path):  # 如果是文件
                    os.remove(path)
                elif os.path.isdir(path):  # 如果是目录
                    shutil.rmtree(path)  # 递归删除目录及其内容

            return True
        except OSError:
            return False
