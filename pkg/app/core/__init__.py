# 核心模組初始化 