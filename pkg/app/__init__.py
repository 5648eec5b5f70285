# 非完整最優控制工具包
